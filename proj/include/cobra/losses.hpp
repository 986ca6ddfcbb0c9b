#pragma once

// Contrastive objectives over a batch of M samples seen through V in {2, 3}
// views (two light views plus an optional adversarial view). Every view row is
// an anchor; its positives are the other views of the same sample and its
// denominator runs over every other row of the batch.

#include <vector>

#include "cobra/common.hpp"

namespace cobra::losses {

/// sum over every (anchor, positive) term, or their mean.
enum class Reduction { sum, mean };

struct PairBatch {
  torch::Tensor z1;     // (M, D) projected tau_1 views
  torch::Tensor z2;     // (M, D) projected tau_2 views
  torch::Tensor z_adv;  // (M, D) adversarial views, undefined before the attack
  /// opposite[i] is the sample paired with i (normal <-> crafted). Must be an
  /// involution without fixed points. The opposite embedding of every anchor of
  /// sample i is z1[opposite[i]].
  std::vector<std::int64_t> opposite;
  torch::Tensor labels;  // (M,) 0 normal, 1 pseudo-anomaly; may be undefined
  double temperature = 0.5;

  std::int64_t samples() const { return z1.defined() ? z1.size(0) : 0; }
  int views() const { return z_adv.defined() ? 3 : 2; }
};

struct LossOptions {
  double eps_num = 1e-8;
  /// Multiplies the opposite exp term; 0 turns the opposite loss into NT-Xent.
  double opposite_weight = 1.0;
  double cls_weight = 1.0;
  Reduction reduction = Reduction::sum;
};

/// Throws ValidationError on shape, temperature or opposite-map problems.
void validate(const PairBatch& pb, bool need_opposites);

/// Opposite pairing i <-> b + i for a batch made of b normals followed by their b
/// crafted counterparts.
std::vector<std::int64_t> paired_opposites(std::int64_t b);

/// Indices of the opposite rows, as a tensor for index_select.
torch::Tensor opposite_index(const PairBatch& pb);

torch::Tensor nt_xent(const PairBatch& pb, Reduction reduction = Reduction::sum);

/// Positive numerator exp(s_pos / t) - w * exp(s_opp / t), clamped below at
/// eps_num before the log.
torch::Tensor cobra_loss(const PairBatch& pb, const LossOptions& opts = {});

/// Share of all anchor denominators taken by the opposite terms.
torch::Tensor opposite_mass(const PairBatch& pb);

/// Mean binary cross-entropy of the anomaly probability; p is clamped to
/// [1e-7, 1 - 1e-7]. Labels must be 0 or 1.
torch::Tensor cls_loss(const torch::Tensor& p_anom, const torch::Tensor& labels);

/// cobra_loss(pb) + cls_weight * cls_loss(p_anom, labels).
torch::Tensor total_loss(const PairBatch& pb, const torch::Tensor& p_anom, const torch::Tensor& labels,
                         const LossOptions& opts = {});

}  // namespace cobra::losses
