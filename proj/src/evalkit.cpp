#include "cobra/evalkit.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

namespace cobra::evalkit {

namespace {

std::vector<std::size_t> order_desc(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

std::vector<double> to_vector(const torch::Tensor& t) {
  const auto c = t.detach().to(torch::kFloat64).contiguous();
  return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

}  // namespace

FeatureBank build_feature_bank(nets::CobraNet& model, const torch::Tensor& d_train, std::int64_t chunk) {
  check_image_batch(d_train, "build_feature_bank");
  model->eval();
  torch::NoGradGuard guard;
  FeatureBank bank;
  bank.embeddings = nets::chunked(d_train, chunk, [&](const torch::Tensor& x) { return model->embed(x); });
  bank.source_fingerprint = tensor_fingerprint(d_train);
  bank.model_fingerprint = nets::model_fingerprint(*model);
  return bank;
}

std::string_view to_string(ScoreVariant v) {
  switch (v) {
    case ScoreVariant::A: return "A";
    case ScoreVariant::A_prime: return "A_prime";
    case ScoreVariant::A_plus: return "A_plus";
  }
  return "A";
}

ScoreVariant parse_score_variant(std::string_view name) {
  if (name == "A") return ScoreVariant::A;
  if (name == "A_prime") return ScoreVariant::A_prime;
  if (name == "A_plus") return ScoreVariant::A_plus;
  throw ValidationError("unknown score variant '" + std::string(name) + "' (A, A_prime, A_plus)");
}

torch::Tensor anomaly_score_A(const FeatureBank& bank, nets::CobraNet& model, const torch::Tensor& x) {
  if (!bank.embeddings.defined() || bank.embeddings.size(0) == 0) throw ValidationError("anomaly score: empty feature bank");
  const auto z = model->embed(x);
  return -z.matmul(bank.embeddings.to(z.dtype()).t()).amax(1);
}

torch::Tensor anomaly_score_Aprime(nets::CobraNet& model, const torch::Tensor& x) { return model->forward(x).p_anom; }

torch::Tensor anomaly_score(ScoreVariant v, const FeatureBank& bank, nets::CobraNet& model, const torch::Tensor& x) {
  switch (v) {
    case ScoreVariant::A: return anomaly_score_A(bank, model, x);
    case ScoreVariant::A_prime: return anomaly_score_Aprime(model, x);
    case ScoreVariant::A_plus: {
      if (bank.embeddings.size(0) == 0) throw ValidationError("anomaly score: empty feature bank");
      const auto out = model->forward(x);
      return -out.z.matmul(bank.embeddings.to(out.z.dtype()).t()).amax(1) + out.p_anom;
    }
  }
  throw ValidationError("unknown score variant");
}

attacks::ScoreFn make_score_fn(ScoreVariant v, const FeatureBank& bank, nets::CobraNet& model) {
  return [v, &bank, model](const torch::Tensor& x) mutable { return anomaly_score(v, bank, model, x); };
}

Metrics compute_metrics(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ValidationError("compute_metrics: score/label length mismatch");
  std::int64_t pos = 0, neg = 0;
  for (int l : labels) {
    if (l == 1) {
      ++pos;
    } else if (l == 0) {
      ++neg;
    } else {
      throw ValidationError("compute_metrics: labels must be 0 or 1");
    }
  }
  if (pos == 0 || neg == 0) throw ValidationError("compute_metrics: both normal and anomaly samples are required");
  for (double s : scores) {
    if (!std::isfinite(s)) throw ValidationError("compute_metrics: non-finite score");
  }

  const auto idx = order_desc(scores);
  Metrics m;
  // Walk tie groups from the highest score down.
  double tp = 0, fp = 0, auc = 0.0, ap = 0.0;
  bool fpr_found = false;
  for (std::size_t g = 0; g < idx.size();) {
    std::size_t e = g;
    double gp = 0, gn = 0;
    while (e < idx.size() && scores[idx[e]] == scores[idx[g]]) {
      (labels[idx[e]] == 1 ? gp : gn) += 1;
      ++e;
    }
    // Anomalies in this group beat every normal below it and tie with the group's normals.
    auc += gn * (tp + 0.5 * gp);
    tp += gp;
    fp += gn;
    if (gp > 0) ap += (gp / static_cast<double>(pos)) * (tp / (tp + fp));
    if (!fpr_found && tp / static_cast<double>(pos) >= 0.95) {
      m.fpr95 = fp / static_cast<double>(neg);
      fpr_found = true;
    }
    g = e;
  }
  m.auroc = auc / (static_cast<double>(pos) * static_cast<double>(neg));
  m.aupr = ap;
  return m;
}

std::string_view to_string(ConditionKind k) {
  switch (k) {
    case ConditionKind::clean: return "clean";
    case ConditionKind::pgd: return "pgd";
    case ConditionKind::fgsm: return "fgsm";
    case ConditionKind::blackbox: return "blackbox";
  }
  return "clean";
}

ConditionKind parse_condition_kind(std::string_view name) {
  if (name == "clean") return ConditionKind::clean;
  if (name == "pgd") return ConditionKind::pgd;
  if (name == "fgsm") return ConditionKind::fgsm;
  if (name == "blackbox") return ConditionKind::blackbox;
  throw ValidationError("unknown condition '" + std::string(name) + "' (clean, pgd, fgsm, blackbox)");
}

Condition Condition::clean() {
  Condition c;
  c.name = "clean";
  c.kind = ConditionKind::clean;
  return c;
}

nlohmann::json Condition::to_json() const {
  nlohmann::json j{{"name", name}, {"kind", std::string(to_string(kind))}};
  if (kind != ConditionKind::clean) j["attack"] = attack.to_json();
  if (kind == ConditionKind::blackbox) j["queries"] = queries;
  return j;
}

nlohmann::json EvalRecord::to_json() const {
  return {{"protocol", protocol},
          {"condition", condition},
          {"attack", attack},
          {"variant", std::string(to_string(variant))},
          {"auroc", metrics.auroc},
          {"aupr", metrics.aupr},
          {"fpr95", metrics.fpr95},
          {"n_normal", n_normal},
          {"n_anomaly", n_anomaly},
          {"seconds", seconds},
          {"config_fingerprint", config_fingerprint},
          {"model_fingerprint", model_fingerprint}};
}

EvalRecord EvalRecord::from_json(const nlohmann::json& j) {
  EvalRecord r;
  r.protocol = j.at("protocol");
  r.condition = j.at("condition").get<std::string>();
  r.attack = j.value("attack", nlohmann::json());
  r.variant = parse_score_variant(j.at("variant").get<std::string>());
  r.metrics = {j.at("auroc").get<double>(), j.at("aupr").get<double>(), j.at("fpr95").get<double>()};
  r.n_normal = j.at("n_normal").get<std::int64_t>();
  r.n_anomaly = j.at("n_anomaly").get<std::int64_t>();
  r.seconds = j.value("seconds", 0.0);
  r.config_fingerprint = j.value("config_fingerprint", std::string());
  r.model_fingerprint = j.value("model_fingerprint", std::string());
  return r;
}

const EvalRecord& EvalReport::find(const std::string& condition, ScoreVariant v) const {
  for (const auto& r : records) {
    if (r.condition == condition && r.variant == v) return r;
  }
  throw ValidationError("report has no record for condition '" + condition + "' variant " + std::string(to_string(v)));
}

void EvalReport::write_text(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  if (!complete) out << nlohmann::json{{"incomplete", true}}.dump() << "\n";
  for (const auto& r : records) out << r.to_json().dump() << "\n";
  for (const auto& w : warnings) out << nlohmann::json{{"warning", w}}.dump() << "\n";
}

void EvalReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "protocol,condition,variant,epsilon,steps,restarts,norm,auroc,aupr,fpr95,n_normal,n_anomaly,seconds,"
         "config_fingerprint\n";
  out << std::setprecision(17);
  for (const auto& r : records) {
    const bool attacked = r.attack.is_object();
    out << csv_escape(r.protocol.dump()) << "," << r.condition << "," << to_string(r.variant) << ","
        << (attacked ? r.attack.at("epsilon").get<double>() : 0.0) << ","
        << (attacked ? r.attack.at("steps").get<int>() : 0) << ","
        << (attacked ? r.attack.at("restarts").get<int>() : 0) << ","
        << (attacked ? r.attack.at("norm").get<std::string>() : std::string("none")) << "," << r.metrics.auroc << ","
        << r.metrics.aupr << "," << r.metrics.fpr95 << "," << r.n_normal << "," << r.n_anomaly << "," << r.seconds
        << "," << r.config_fingerprint << "\n";
  }
}

EvalReport EvalReport::read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("report not found: " + path.string());
  EvalReport rep;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    if (j.contains("warning")) {
      rep.warnings.push_back(j.at("warning").get<std::string>());
    } else if (j.contains("incomplete")) {
      rep.complete = false;
    } else {
      rep.records.push_back(EvalRecord::from_json(j));
    }
  }
  return rep;
}

std::string EvalReport::render_table() const {
  std::vector<std::string> conditions;
  std::vector<ScoreVariant> variants;
  for (const auto& r : records) {
    if (std::find(conditions.begin(), conditions.end(), r.condition) == conditions.end()) conditions.push_back(r.condition);
    if (std::find(variants.begin(), variants.end(), r.variant) == variants.end()) variants.push_back(r.variant);
  }
  std::ostringstream os;
  os << std::fixed << std::setprecision(1);
  if (!complete) os << "INCOMPLETE REPORT\n";
  os << std::left << std::setw(10) << "variant";
  for (const auto& c : conditions) {
    if (c != "clean") os << std::setw(24) << ("clean / " + c);
  }
  if (conditions.size() == 1) os << std::setw(24) << "clean";
  os << "\n";
  for (auto v : variants) {
    os << std::setw(10) << to_string(v);
    double clean = 0.0;
    for (const auto& r : records) {
      if (r.variant == v && r.condition == "clean") clean = r.metrics.auroc;
    }
    for (const auto& c : conditions) {
      if (c == "clean" && conditions.size() > 1) continue;
      for (const auto& r : records) {
        if (r.variant != v || r.condition != c) continue;
        std::ostringstream cell;
        cell << std::fixed << std::setprecision(1) << 100.0 * clean;
        if (c != "clean") cell << " / " << 100.0 * r.metrics.auroc;
        os << std::setw(24) << cell.str();
      }
    }
    os << "\n";
  }
  os << "(AUROC %, cells read clean / attacked)\n";
  for (const auto& w : warnings) os << "warning: " << w << "\n";
  return os.str();
}

EvalReport run_protocol(nets::CobraNet& model, const FeatureBank& bank, const torch::Tensor& test_x,
                        const std::vector<int>& test_labels, const nlohmann::json& protocol,
                        const std::vector<Condition>& conditions, const std::vector<ScoreVariant>& variants,
                        const EvalOptions& opts, std::vector<TranscriptRow>* transcripts) {
  check_image_batch(test_x, "run_protocol");
  if (static_cast<std::int64_t>(test_labels.size()) != test_x.size(0)) {
    throw ValidationError("run_protocol: label count mismatch");
  }
  if (variants.empty()) throw ValidationError("run_protocol: no score variants");
  model->eval();
  std::vector<Condition> all{Condition::clean()};
  for (const auto& c : conditions) {
    if (c.kind != ConditionKind::clean) all.push_back(c);
  }
  const auto y = torch::tensor(std::vector<std::int64_t>(test_labels.begin(), test_labels.end()), torch::kInt64);
  const auto direction = (1 - 2 * y).to(test_x.dtype());
  std::int64_t n_anom = 0;
  for (int l : test_labels) n_anom += l == 1 ? 1 : 0;

  EvalReport rep;
  const auto fp = nets::model_fingerprint(*model);
  for (auto v : variants) {
    auto score = make_score_fn(v, bank, model);
    auto score_all = [&](const torch::Tensor& x) {
      torch::NoGradGuard guard;
      return to_vector(nets::chunked(x, opts.chunk, [&](const torch::Tensor& b) { return score(b); }));
    };
    const auto clean_scores = score_all(test_x);
    double clean_auroc = 0.0;
    for (const auto& cond : all) {
      const auto t0 = std::chrono::steady_clock::now();
      std::vector<double> scores;
      if (cond.kind == ConditionKind::clean) {
        scores = clean_scores;
      } else {
        std::vector<torch::Tensor> parts;
        std::uint64_t chunk_id = 0;
        for (std::int64_t i = 0; i < test_x.size(0); i += opts.chunk, ++chunk_id) {
          const auto end = std::min(i + opts.chunk, test_x.size(0));
          const auto xb = test_x.slice(0, i, end);
          const auto yb = direction.slice(0, i, end);
          auto acfg = cond.attack;
          acfg.seed = derive_seed(cond.attack.seed, chunk_id);
          torch::Tensor adv;
          switch (cond.kind) {
            case ConditionKind::pgd: adv = attacks::score_attack_pgd(score, xb, yb, acfg); break;
            case ConditionKind::fgsm: adv = attacks::fgsm_score_attack(score, xb, yb, acfg.epsilon); break;
            case ConditionKind::blackbox: adv = attacks::blackbox_score_attack(score, xb, yb, acfg, cond.queries); break;
            case ConditionKind::clean: adv = xb; break;
          }
          parts.push_back(adv);
        }
        scores = score_all(torch::cat(parts, 0));
      }
      EvalRecord rec;
      rec.protocol = protocol;
      rec.condition = cond.name;
      if (cond.kind != ConditionKind::clean) {
        rec.attack = cond.attack.to_json();
        rec.attack["kind"] = std::string(to_string(cond.kind));
        if (cond.kind == ConditionKind::blackbox) rec.attack["queries"] = cond.queries;
      }
      rec.variant = v;
      rec.metrics = compute_metrics(scores, test_labels);
      rec.n_normal = test_x.size(0) - n_anom;
      rec.n_anomaly = n_anom;
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      rec.config_fingerprint = opts.config_fingerprint;
      rec.model_fingerprint = fp;
      if (cond.kind == ConditionKind::clean) {
        clean_auroc = rec.metrics.auroc;
      } else if (cond.attack.epsilon > 0.0 && rec.metrics.auroc > clean_auroc) {
        rep.warnings.push_back("condition " + cond.name + " variant " + std::string(to_string(v)) +
                               ": attacked AUROC " + std::to_string(rec.metrics.auroc) + " exceeds clean AUROC " +
                               std::to_string(clean_auroc) + " (possible gradient masking)");
      }
      if (opts.verbose) {
        std::cerr << "[eval] " << cond.name << " " << to_string(v) << " auroc " << rec.metrics.auroc << " ("
                  << rec.seconds << " s)\n";
      }
      if (transcripts) {
        for (std::size_t i = 0; i < scores.size(); ++i) {
          transcripts->push_back({cond.name, v, static_cast<std::int64_t>(i), test_labels[i], clean_scores[i], scores[i]});
        }
      }
      rep.records.push_back(std::move(rec));
    }
  }
  return rep;
}

void write_transcripts(const std::filesystem::path& path, const std::vector<TranscriptRow>& rows) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "condition,variant,index,label,score_clean,score_attacked\n" << std::setprecision(17);
  for (const auto& r : rows) {
    out << r.condition << "," << to_string(r.variant) << "," << r.index << "," << r.label << "," << r.score_clean << ","
        << r.score_attacked << "\n";
  }
}

}  // namespace cobra::evalkit
