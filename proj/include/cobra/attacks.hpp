#pragma once

#include <algorithm>
#include <functional>
#include <json.hpp>

#include "cobra/losses.hpp"
#include "cobra/nets.hpp"

namespace cobra::attacks {

enum class Norm { linf, l2 };

std::string_view to_string(Norm norm);
Norm parse_norm(std::string_view name);

struct AttackConfig {
  double epsilon = 4.0 / 255.0;
  double alpha = 0.0;  // 0 selects min(epsilon, 2.5 * epsilon / steps)
  int steps = 10;
  int restarts = 1;
  Norm norm = Norm::linf;
  bool random_init = true;
  Seed seed = 0;

  double step_size() const { return alpha > 0.0 ? alpha : std::min(epsilon, 2.5 * epsilon / steps); }
  void validate() const;
  nlohmann::json to_json() const;
};

/// Per-sample differentiable score, (N, C, H, W) -> (N,).
using ScoreFn = std::function<torch::Tensor(const torch::Tensor&)>;

/// Projects x_adv onto the epsilon ball around x, then onto [0, 1].
torch::Tensor project(const torch::Tensor& x_adv, const torch::Tensor& x, double epsilon, Norm norm);

/// Signed-gradient ascent on y * score; y is +1 for normals, -1 for anomalies.
/// Over restarts the per-sample point with the largest y * score wins. Restart r
/// draws its start from derive_seed(cfg.seed, r).
torch::Tensor score_attack_pgd(const ScoreFn& score, const torch::Tensor& x, const torch::Tensor& y,
                               const AttackConfig& cfg);

/// One full-epsilon signed step from x.
torch::Tensor fgsm_score_attack(const ScoreFn& score, const torch::Tensor& x, const torch::Tensor& y, double epsilon);

/// Gradient-free greedy search over square patches of +-epsilon sign
/// perturbations. Query 1 scores x itself; each later query proposes one patch
/// flip per sample and keeps it only when y * score strictly improves. The
/// patch side shrinks from a quarter of the image to one pixel.
torch::Tensor blackbox_score_attack(const ScoreFn& score, const torch::Tensor& x, const torch::Tensor& y,
                                    const AttackConfig& cfg, int queries);

/// Inputs the training attack needs besides the images themselves.
struct TrainingAttackInputs {
  torch::Tensor z1;  // clean view embeddings, treated as constants
  torch::Tensor z2;
  std::vector<std::int64_t> opposite;
  torch::Tensor labels;
  double temperature = 0.5;
  losses::LossOptions loss;
};

/// PGD that maximizes cobra_loss (x_adv as a third view) + cls_weight * cls_loss
/// on x_adv. Gradients reach the input only; parameters are not touched.
torch::Tensor pgd_training_attack(nets::CobraNet& model, const torch::Tensor& x, const TrainingAttackInputs& in,
                                  const AttackConfig& cfg);

/// The training-attack objective evaluated at x_adv.
torch::Tensor training_loss_at(nets::CobraNet& model, const torch::Tensor& x_adv, const TrainingAttackInputs& in);

}  // namespace cobra::attacks
