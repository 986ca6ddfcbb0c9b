#pragma once

#include <filesystem>
#include <json.hpp>
#include <span>
#include <string>
#include <vector>

#include "cobra/attacks.hpp"
#include "cobra/nets.hpp"

namespace cobra::evalkit {

/// Projected embeddings of the normal training set.
struct FeatureBank {
  torch::Tensor embeddings;  // (n, proj_dim), unit rows
  std::string source_fingerprint;
  std::string model_fingerprint;
};

FeatureBank build_feature_bank(nets::CobraNet& model, const torch::Tensor& d_train, std::int64_t chunk = 256);

enum class ScoreVariant { A, A_prime, A_plus };

std::string_view to_string(ScoreVariant v);
ScoreVariant parse_score_variant(std::string_view name);

/// -max_i cos(f(x), bank_i); differentiable in x through the arg-max row.
torch::Tensor anomaly_score_A(const FeatureBank& bank, nets::CobraNet& model, const torch::Tensor& x);
/// Anomaly-class probability of the binary head.
torch::Tensor anomaly_score_Aprime(nets::CobraNet& model, const torch::Tensor& x);
torch::Tensor anomaly_score(ScoreVariant v, const FeatureBank& bank, nets::CobraNet& model, const torch::Tensor& x);

attacks::ScoreFn make_score_fn(ScoreVariant v, const FeatureBank& bank, nets::CobraNet& model);

struct Metrics {
  double auroc = 0.0;
  double aupr = 0.0;
  double fpr95 = 0.0;
};

/// labels: 0 normal, 1 anomaly (positive class). AUROC counts ties as 1/2;
/// AUPR is average precision over distinct thresholds; fpr95 is the lowest FPR
/// among thresholds whose TPR reaches 0.95.
Metrics compute_metrics(std::span<const double> scores, std::span<const int> labels);

enum class ConditionKind { clean, pgd, fgsm, blackbox };

std::string_view to_string(ConditionKind k);
ConditionKind parse_condition_kind(std::string_view name);

struct Condition {
  std::string name;  // e.g. "pgd-100"
  ConditionKind kind = ConditionKind::clean;
  attacks::AttackConfig attack;
  int queries = 1000;  // black-box only

  static Condition clean();
  nlohmann::json to_json() const;
};

struct EvalRecord {
  nlohmann::json protocol;
  std::string condition;
  nlohmann::json attack;  // null for clean
  ScoreVariant variant = ScoreVariant::A;
  Metrics metrics;
  std::int64_t n_normal = 0;
  std::int64_t n_anomaly = 0;
  double seconds = 0.0;
  std::string config_fingerprint;
  std::string model_fingerprint;

  nlohmann::json to_json() const;
  static EvalRecord from_json(const nlohmann::json& j);
};

struct TranscriptRow {
  std::string condition;
  ScoreVariant variant = ScoreVariant::A;
  std::int64_t index = 0;
  int label = 0;
  double score_clean = 0.0;
  double score_attacked = 0.0;
};

struct EvalReport {
  std::vector<EvalRecord> records;
  std::vector<std::string> warnings;
  bool complete = true;

  /// The record for (condition, variant); throws if absent.
  const EvalRecord& find(const std::string& condition, ScoreVariant v) const;

  /// One JSON record per line; warnings as {"warning": ...} lines.
  void write_text(const std::filesystem::path& path) const;
  void write_csv(const std::filesystem::path& path) const;
  static EvalReport read_text(const std::filesystem::path& path);
  /// Human-readable "Clean / attack" AUROC table.
  std::string render_table() const;
};

struct EvalOptions {
  std::int64_t chunk = 256;
  std::string config_fingerprint;
  bool verbose = false;
};

/// Attacks normals with y = +1 and anomalies with y = -1 against each score
/// variant, then scores and measures. The clean condition is always evaluated
/// first even when absent from `conditions`.
EvalReport run_protocol(nets::CobraNet& model, const FeatureBank& bank, const torch::Tensor& test_x,
                        const std::vector<int>& test_labels, const nlohmann::json& protocol,
                        const std::vector<Condition>& conditions, const std::vector<ScoreVariant>& variants,
                        const EvalOptions& opts = {}, std::vector<TranscriptRow>* transcripts = nullptr);

void write_transcripts(const std::filesystem::path& path, const std::vector<TranscriptRow>& rows);

}  // namespace cobra::evalkit
