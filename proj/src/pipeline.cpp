#include "cobra/pipeline.hpp"

#include <fstream>
#include <iostream>

namespace cobra::pipeline {

namespace {

crafter::ThresholdModel load_or_craft(const config::ExperimentConfig& cfg, const RunFiles& files) {
  if (std::filesystem::exists(files.threshold())) return crafter::ThresholdModel::load(files.threshold());
  if (cfg.run.verbose) std::cerr << "[train] no threshold.ckpt yet; crafting first\n";
  cmd_craft(cfg);
  return crafter::ThresholdModel::load(files.threshold());
}

void save_report(const evalkit::EvalReport& rep, const RunFiles& files) {
  rep.write_text(files.report_txt());
  rep.write_csv(files.report_csv());
}

evalkit::EvalReport evaluate(const config::ExperimentConfig& cfg, const std::vector<evalkit::Condition>& conditions,
                             bool transcripts) {
  const auto files = prepare_run(cfg);
  if (!std::filesystem::exists(files.model())) {
    throw NotFoundError("no trained model at " + files.model().string() + "; run `cobra train` first");
  }
  auto loaded = nets::load_checkpoint(files.model());
  auto model = loaded.model;
  model->eval();
  const auto protocol = data::load_protocol(cfg.data);
  const auto bank = evalkit::build_feature_bank(model, protocol.train, cfg.eval.chunk);
  const evalkit::EvalOptions opts{cfg.eval.chunk, cfg.fingerprint(), cfg.run.verbose};

  evalkit::EvalReport rep;
  rep.complete = false;
  std::vector<evalkit::TranscriptRow> rows;
  try {
    std::vector<evalkit::Condition> pending{evalkit::Condition::clean()};
    for (const auto& c : conditions) {
      if (c.kind != evalkit::ConditionKind::clean) pending.push_back(c);
    }
    for (std::size_t i = 0; i < pending.size(); ++i) {
      const std::vector<evalkit::Condition> one{pending[i]};
      auto part = evalkit::run_protocol(model, bank, protocol.test, protocol.test_labels, cfg.data.to_json(), one,
                                        cfg.eval.variants, opts, transcripts ? &rows : nullptr);
      for (auto& r : part.records) {
        if (i > 0 && r.condition == "clean") continue;
        rep.records.push_back(std::move(r));
      }
      rep.warnings.insert(rep.warnings.end(), part.warnings.begin(), part.warnings.end());
      save_report(rep, files);
    }
  } catch (...) {
    save_report(rep, files);
    throw;
  }
  rep.complete = true;
  save_report(rep, files);
  if (transcripts) {
    std::vector<evalkit::TranscriptRow> attacked;
    for (auto& r : rows) {
      if (r.condition != "clean") attacked.push_back(std::move(r));
    }
    evalkit::write_transcripts(files.transcripts(), attacked);
  }
  for (const auto& w : rep.warnings) std::cerr << "warning: " << w << "\n";
  return rep;
}

}  // namespace

RunFiles files_for(const config::ExperimentConfig& cfg) { return {cfg.run_dir()}; }

RunFiles prepare_run(const config::ExperimentConfig& cfg) {
  const auto files = files_for(cfg);
  std::filesystem::create_directories(files.dir);
  std::ofstream out(files.config());
  if (!out) throw Error("cannot write " + files.config().string());
  out << config::to_ini(cfg.raw);
  return files;
}

void write_pgm_grid(const std::filesystem::path& path, const torch::Tensor& images, std::int64_t cols) {
  check_image_batch(images, "write_pgm_grid");
  const auto x = images.mean(1).clamp(0.0, 1.0).mul(255.0).round().to(torch::kUInt8).contiguous();
  const auto n = x.size(0), h = x.size(1), w = x.size(2);
  cols = std::max<std::int64_t>(1, std::min(cols, n));
  const auto rows = (n + cols - 1) / cols;
  const auto gh = rows * (h + 1) + 1, gw = cols * (w + 1) + 1;
  std::vector<std::uint8_t> grid(static_cast<std::size_t>(gh * gw), 128);
  const auto* src = x.data_ptr<std::uint8_t>();
  for (std::int64_t i = 0; i < n; ++i) {
    const auto r0 = 1 + (i / cols) * (h + 1), c0 = 1 + (i % cols) * (w + 1);
    for (std::int64_t y = 0; y < h; ++y) {
      std::copy_n(src + (i * h + y) * w, w, grid.begin() + (r0 + y) * gw + c0);
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "P5\n" << gw << " " << gh << "\n255\n";
  out.write(reinterpret_cast<const char*>(grid.data()), static_cast<std::streamsize>(grid.size()));
}

nlohmann::json cmd_craft(const config::ExperimentConfig& cfg) {
  const auto files = prepare_run(cfg);
  const auto protocol = data::load_protocol(cfg.data);
  const Seed seed = derive_seed(cfg.run.seed, "craft");
  crafter::ClassifierReport creport;
  const auto tm = crafter::fit_crafter(protocol.train, cfg.crafter, seed, cfg.run.workers, &creport);
  tm.save(files.threshold(), {{"config_fingerprint", cfg.fingerprint()},
                              {"classifier_epoch_accuracy", creport.epoch_accuracy}});

  const auto n = std::min<std::int64_t>(256, protocol.train.size(0));
  const auto sample = protocol.train.slice(0, 0, n);
  const auto crafted = crafter::craft_batch(sample, tm, cfg.crafter.bank, derive_seed(seed, "preview"),
                                            {cfg.crafter.max_iters, cfg.run.workers});
  std::ofstream log(files.craft_log());
  for (const auto& l : crafted.logs) log << l.to_json().dump() << "\n";

  const auto k = std::min<std::int64_t>(16, n);
  std::vector<torch::Tensor> pairs;
  for (std::int64_t i = 0; i < k; ++i) {
    pairs.push_back(sample[i]);
    pairs.push_back(crafted.images[i]);
  }
  write_pgm_grid(files.craft_grid(), torch::stack(pairs), 8);

  auto summary = crafter::summarize(crafted.logs).to_json();
  summary["lambda"] = tm.lambda();
  summary["classifier_train_accuracy"] = creport.epoch_accuracy.empty() ? 0.0 : creport.epoch_accuracy.back();
  summary["train_samples"] = protocol.train.size(0);
  std::ofstream(files.craft_summary()) << summary.dump(2) << "\n";
  return summary;
}

nlohmann::json cmd_train(const config::ExperimentConfig& cfg, bool resume) {
  const auto files = prepare_run(cfg);
  const auto protocol = data::load_protocol(cfg.data);
  const auto tm = load_or_craft(cfg, files);
  trainer::FitOptions opts;
  opts.train = cfg.train;
  opts.model = cfg.model;
  opts.run_dir = files.dir;
  opts.resume = resume;
  const auto result = trainer::fit(protocol.train, tm, cfg.crafter.bank, opts);
  nlohmann::json summary{{"epochs", cfg.train.epochs},
                         {"steps", result.log.size()},
                         {"checkpoint", result.checkpoint.string()},
                         {"model_fingerprint", nets::model_fingerprint(*result.model)}};
  if (!result.log.empty()) summary["final"] = result.log.back().to_json();
  return summary;
}

evalkit::EvalReport cmd_eval(const config::ExperimentConfig& cfg) {
  return evaluate(cfg, cfg.eval.conditions, cfg.eval.transcripts);
}

evalkit::EvalReport cmd_attack(const config::ExperimentConfig& cfg) {
  bool attacked = false;
  for (const auto& c : cfg.eval.conditions) attacked |= c.kind != evalkit::ConditionKind::clean;
  if (!attacked) throw ValidationError("attack: eval.conditions lists no attack (pgd, pgd_l2, fgsm, blackbox)");
  return evaluate(cfg, cfg.eval.conditions, true);
}

std::string cmd_report(const config::ExperimentConfig& cfg) {
  const auto files = files_for(cfg);
  if (!std::filesystem::exists(files.report_txt())) {
    throw NotFoundError("no report at " + files.report_txt().string() + "; run `cobra eval` first");
  }
  const auto table = evalkit::EvalReport::read_text(files.report_txt()).render_table();
  std::ofstream(files.dir / "report_table.txt") << table;
  return table;
}

}  // namespace cobra::pipeline
