#pragma once

// Distribution-aware pseudo-anomaly crafting: a transformation classifier C
// whose penultimate features are modelled by a GMM; hard-transformed images are
// resampled until their likelihood p-value under the normal data drops to the
// significance level.

#include <filesystem>
#include <json.hpp>
#include <span>
#include <vector>

#include "cobra/augment.hpp"
#include "cobra/gmm.hpp"
#include "cobra/nets.hpp"

namespace cobra::crafter {

using augment::TransformSpec;

struct TransformDataset {
  torch::Tensor images;  // (n * k, C, H, W)
  torch::Tensor labels;  // (n * k,) int64, label i <=> bank[i] was applied
};

/// Applies every bank transform once to every training image.
TransformDataset build_transform_dataset(const torch::Tensor& d_train, std::span<const TransformSpec> bank,
                                         Seed seed, int workers = 1);

struct ClassifierOptions {
  nets::EncoderKind encoder = nets::EncoderKind::small_cnn;
  int epochs = 20;
  std::int64_t batch_size = 128;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  Seed seed = 0;
  bool verbose = false;
};

struct ClassifierReport {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_accuracy;  // running accuracy over each epoch's batches
};

/// SGD with momentum and cosine-decayed learning rate. Throws NumericError if the
/// loss becomes non-finite.
nets::TransformClassifier train_transform_classifier(const TransformDataset& data, const ClassifierOptions& opts,
                                                     ClassifierReport* report = nullptr);

/// Fraction of `data` the classifier labels correctly (eval pass, no grad).
double classifier_accuracy(nets::TransformClassifier& classifier, const TransformDataset& data);

class ThresholdModel {
 public:
  ThresholdModel(nets::TransformClassifier classifier, GaussianMixture gmm, std::vector<double> train_loglik,
                 double lambda);

  /// Penultimate classifier activations, (N, D) float64.
  torch::Tensor embed(const torch::Tensor& x) const;
  std::vector<double> log_likelihood(const torch::Tensor& x) const;

  /// (1 + #{train log-likelihoods <= ll}) / (n + 1).
  double pvalue_from_loglik(double ll) const;
  std::vector<double> pvalues(const torch::Tensor& x) const;
  /// Single (C, H, W) image.
  double pvalue(const torch::Tensor& image) const;

  /// Acceptance predicate of the crafting loop.
  bool is_anomalous(double pvalue) const { return pvalue <= lambda_; }

  double lambda() const { return lambda_; }
  const GaussianMixture& gmm() const { return gmm_; }
  const std::vector<double>& train_loglik() const { return train_loglik_; }
  nets::TransformClassifier classifier() const { return classifier_; }

  ThresholdModel with_lambda(double lambda) const;

  void save(const std::filesystem::path& path, const nlohmann::json& extra_meta = nlohmann::json::object()) const;
  static ThresholdModel load(const std::filesystem::path& path);

 private:
  nets::TransformClassifier classifier_;
  GaussianMixture gmm_;
  std::vector<double> train_loglik_;
  double lambda_;
};

/// Fits the GMM on C(d_train) and tabulates the sorted training log-likelihoods.
ThresholdModel fit_threshold_model(nets::TransformClassifier classifier, const torch::Tensor& d_train, double lambda,
                                   const GmmOptions& gmm_opts = {});

struct CrafterConfig {
  std::vector<TransformSpec> bank = augment::default_bank();
  double lambda = 0.05;
  ClassifierOptions classifier;
  GmmOptions gmm;
  int max_iters = 10;
};

/// Transform dataset, classifier training and GMM fit in one go. The classifier
/// and GMM seeds are derived from `seed`.
ThresholdModel fit_crafter(const torch::Tensor& d_train, const CrafterConfig& cfg, Seed seed, int workers = 1,
                           ClassifierReport* report = nullptr);

struct CraftLog {
  int attempts = 0;
  double final_pvalue = 1.0;
  std::vector<augment::TransformId> sequence_used;
  bool fallback_used = false;

  nlohmann::json to_json() const;
};

struct CraftOptions {
  int max_iters = 10;
  int workers = 1;
};

struct CraftResult {
  torch::Tensor images;  // images[i] is the crafted opposite of input i
  std::vector<CraftLog> logs;
};

/// Rejection-samples one pseudo-anomaly from the (C, H, W) image `x`. mixup and
/// cutmix donors come from `donors` (defaults to x itself).
std::pair<torch::Tensor, CraftLog> craft_pseudo_anomaly(const torch::Tensor& x, const ThresholdModel& tm,
                                                        std::span<const TransformSpec> bank, Seed seed,
                                                        int max_iters, const torch::Tensor& donors = {});

/// One crafted opposite per input, donors drawn from the batch. Sample i uses
/// derive_seed(seed, i); candidates of all pending samples are scored together.
CraftResult craft_batch(const torch::Tensor& b_normal, const ThresholdModel& tm, std::span<const TransformSpec> bank,
                        Seed seed, const CraftOptions& opts = {});

struct CraftSummary {
  std::int64_t count = 0;
  double accept_rate = 0.0;  // fraction that did not need the fallback
  double mean_attempts = 0.0;
  nlohmann::json to_json() const;
};

CraftSummary summarize(std::span<const CraftLog> logs);

}  // namespace cobra::crafter
