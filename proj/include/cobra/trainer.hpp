#pragma once

#include <filesystem>
#include <json.hpp>
#include <optional>
#include <span>
#include <vector>

#include "cobra/attacks.hpp"
#include "cobra/augment.hpp"
#include "cobra/crafter.hpp"
#include "cobra/losses.hpp"
#include "cobra/nets.hpp"

namespace cobra::trainer {

enum class OptimizerKind { sgd_momentum, lars };

std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view name);

struct TrainConfig {
  int epochs = 10;
  std::int64_t batch_size = 128;
  OptimizerKind optimizer = OptimizerKind::sgd_momentum;
  double peak_lr = 0.1;
  int warmup_epochs = 10;
  double weight_decay = 1e-6;
  double momentum = 0.9;
  double lars_eta = 0.001;
  double grad_clip = 0.0;  // max global gradient norm, 0 disables
  double temperature = 0.5;
  losses::LossOptions loss{1e-8, 1.0, 1.0, losses::Reduction::mean};
  attacks::AttackConfig attack;
  augment::LightViewSpec views;
  int craft_max_iters = 10;
  Seed seed = 0;
  int workers = 1;
  bool verbose = false;

  void validate() const;
  nlohmann::json to_json() const;
};

/// Learning rate at a global step: linear warmup to peak_lr, then cosine decay to 0.
double learning_rate(const TrainConfig& cfg, std::int64_t step, std::int64_t steps_per_epoch);

/// One step's images: 2b samples, the first b normal and the last b their crafted
/// opposites.
struct PairImages {
  torch::Tensor raw;    // (2b, C, H, W)
  torch::Tensor view1;  // tau_1 views
  torch::Tensor view2;  // tau_2 views
  std::vector<std::int64_t> opposite;  // i <-> b + i
  torch::Tensor labels;                // 0 for the first half, 1 for the second
  std::vector<crafter::CraftLog> craft_logs;
};

/// Crafts with derive_seed(seed, "craft") and draws the two views with
/// derive_seed(seed, "views").
PairImages make_pair_batch(const torch::Tensor& b_normal, const crafter::ThresholdModel& tm,
                           std::span<const augment::TransformSpec> bank, Seed seed, const TrainConfig& cfg);

/// Momentum buffers for the hand-written SGD / LARS updates.
class Optimizer {
 public:
  Optimizer(std::vector<torch::Tensor> params, const TrainConfig& cfg);
  void step(double lr);
  void zero_grad();
  std::vector<torch::Tensor>& buffers() { return buffers_; }

 private:
  std::vector<torch::Tensor> params_;
  std::vector<torch::Tensor> buffers_;
  OptimizerKind kind_;
  double momentum_;
  double weight_decay_;
  double eta_;
};

struct StepResult {
  double loss = 0.0;
  double cobra = 0.0;
  double cls = 0.0;
  double nt_xent = 0.0;
  double opposite_mass = 0.0;
  double cls_acc = 0.0;
  double grad_norm = 0.0;  // before clipping
  double adv_linf = 0.0;  // max |x_adv - x|
};

/// Attack against the current parameters, then one optimizer update on
/// cobra_loss over (view1, view2, adv) + cls_weight * cls_loss over [x, x_adv].
/// Throws NumericError on a non-finite loss or gradient before updating.
StepResult train_step(nets::CobraNet& model, Optimizer& opt, const PairImages& batch, const TrainConfig& cfg,
                      double lr, Seed attack_seed);

struct StepRecord {
  int epoch = 0;
  std::int64_t step = 0;
  double lr = 0.0;
  StepResult result;
  double craft_accept_rate = 0.0;
  nlohmann::json to_json() const;
};

struct FitOptions {
  TrainConfig train;
  nets::ModelConfig model;
  /// When set, model.ckpt is written there after every epoch and log.jsonl
  /// receives one record per step.
  std::filesystem::path run_dir;
  bool resume = false;
};

struct FitResult {
  nets::CobraNet model{nullptr};
  std::vector<StepRecord> log;
  std::filesystem::path checkpoint;
  int start_epoch = 0;
};

/// The training loop over an unlabeled normal set. Batches are reshuffled every
/// epoch from (seed, epoch) and every step draws its own seeds from
/// (seed, epoch, step), so a run resumed from an epoch checkpoint replays the
/// uninterrupted run.
FitResult fit(const torch::Tensor& d_train, const crafter::ThresholdModel& tm,
              std::span<const augment::TransformSpec> bank, const FitOptions& opts);

}  // namespace cobra::trainer
