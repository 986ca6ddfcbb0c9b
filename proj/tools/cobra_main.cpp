// Command-line front end: cobra <craft|train|eval|attack|report> [options].
//
// Exit codes: 0 success, 1 invalid config or arguments, 2 missing input,
// 3 runtime failure.

#include <CLI11.hpp>

#include <iostream>

#include "cobra/pipeline.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kInvalid = 1;
constexpr int kMissing = 2;
constexpr int kRuntime = 3;

std::vector<std::pair<std::string, std::string>> parse_overrides(const std::vector<std::string>& extras) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const auto& arg = extras[i];
    if (arg.rfind("--", 0) != 0) throw cobra::ValidationError("unexpected argument '" + arg + "'");
    const auto body = arg.substr(2);
    if (const auto eq = body.find('='); eq != std::string::npos) {
      out.emplace_back(body.substr(0, eq), body.substr(eq + 1));
    } else if (i + 1 < extras.size()) {
      out.emplace_back(body, extras[++i]);
    } else {
      throw cobra::ValidationError("override '" + arg + "' has no value");
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarially robust anomaly detection: craft, train, eval, attack, report"};
  app.require_subcommand(1);
  std::string config_path;
  int workers = 0;
  std::string run_id;
  bool resume = false;
  app.add_option("-c,--config", config_path, "experiment config (INI)");
  app.add_option("--workers", workers, "data-worker threads (overrides run.workers)");
  app.add_option("--run-id", run_id, "run name (overrides run.run_id)");

  auto* craft = app.add_subcommand("craft", "fit the transform classifier + GMM and preview crafted anomalies");
  auto* train = app.add_subcommand("train", "adversarial contrastive training");
  train->add_flag("--resume", resume, "continue from the run's model.ckpt");
  auto* eval = app.add_subcommand("eval", "score the test split under eval.conditions");
  auto* attack = app.add_subcommand("attack", "attacked evaluation with per-sample transcripts");
  auto* report = app.add_subcommand("report", "print the run's report as a table");
  for (auto* sub : {craft, train, eval, attack, report}) {
    sub->allow_extras();
    sub->fallthrough();
  }
  app.allow_extras();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalid;
  }

  try {
    std::vector<std::string> extras = app.remaining();
    auto overrides = parse_overrides(extras);
    if (workers > 0) overrides.emplace_back("run.workers", std::to_string(workers));
    if (!run_id.empty()) overrides.emplace_back("run.run_id", run_id);
    const auto file = config_path.empty() ? cobra::config::RawConfig{} : cobra::config::read_ini(config_path);
    const auto cfg = cobra::config::build(cobra::config::resolve(file, overrides));
    if (cfg.run.workers == 1) torch::set_num_threads(1);

    if (*craft) {
      std::cout << cobra::pipeline::cmd_craft(cfg).dump(2) << "\n";
    } else if (*train) {
      std::cout << cobra::pipeline::cmd_train(cfg, resume).dump(2) << "\n";
    } else if (*eval) {
      std::cout << cobra::pipeline::cmd_eval(cfg).render_table();
    } else if (*attack) {
      std::cout << cobra::pipeline::cmd_attack(cfg).render_table();
    } else if (*report) {
      std::cout << cobra::pipeline::cmd_report(cfg);
    }
    return kOk;
  } catch (const cobra::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const cobra::NotFoundError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kMissing;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
}
