#include "cobra/losses.hpp"

namespace cobra::losses {

namespace {

constexpr double kProbClamp = 1e-7;

struct Similarities {
  torch::Tensor s;       // (VM, VM) cosine / t
  torch::Tensor denom;   // (VM,) sum over k != a of exp(s[a, k])
  std::int64_t m = 0;
  int v = 0;
};

Similarities similarities(const PairBatch& pb) {
  std::vector<torch::Tensor> rows{pb.z1, pb.z2};
  if (pb.z_adv.defined()) rows.push_back(pb.z_adv);
  const auto r = torch::nn::functional::normalize(torch::cat(rows, 0),
                                                  torch::nn::functional::NormalizeFuncOptions().dim(1).eps(1e-12));
  Similarities out;
  out.m = pb.samples();
  out.v = pb.views();
  out.s = r.matmul(r.t()) / pb.temperature;
  const auto n = out.s.size(0);
  const auto off_diag = torch::ones({n, n}, out.s.options()) - torch::eye(n, out.s.options());
  out.denom = (out.s.exp() * off_diag).sum(1);
  return out;
}

// Row index of every (anchor, positive) pair, flattened over view offsets.
std::pair<torch::Tensor, torch::Tensor> positive_pairs(std::int64_t m, int v) {
  const auto n = m * v;
  std::vector<std::int64_t> anchors, positives;
  for (int d = 1; d < v; ++d) {
    for (std::int64_t a = 0; a < n; ++a) {
      anchors.push_back(a);
      positives.push_back((a + d * m) % n);
    }
  }
  return {torch::tensor(anchors, torch::kInt64), torch::tensor(positives, torch::kInt64)};
}

torch::Tensor reduce(const torch::Tensor& per_term, Reduction reduction) {
  return reduction == Reduction::mean ? per_term.mean() : per_term.sum();
}

}  // namespace

void validate(const PairBatch& pb, bool need_opposites) {
  if (!pb.z1.defined() || !pb.z2.defined()) throw ValidationError("pair batch: missing views");
  if (pb.z1.dim() != 2 || !pb.z1.sizes().equals(pb.z2.sizes())) {
    throw ValidationError("pair batch: z1 and z2 must be (M, D) with equal shapes");
  }
  if (pb.z_adv.defined() && !pb.z_adv.sizes().equals(pb.z1.sizes())) {
    throw ValidationError("pair batch: z_adv shape differs from z1");
  }
  if (pb.samples() < 2) throw ValidationError("pair batch: need at least 2 samples for negatives");
  if (!(pb.temperature > 0.0)) throw ValidationError("pair batch: temperature must be > 0");
  if (pb.labels.defined() && pb.labels.numel() != pb.samples()) throw ValidationError("pair batch: label count mismatch");
  if (!need_opposites) return;
  const auto m = pb.samples();
  if (static_cast<std::int64_t>(pb.opposite.size()) != m) throw ValidationError("pair batch: missing opposites");
  for (std::int64_t i = 0; i < m; ++i) {
    const auto o = pb.opposite[static_cast<std::size_t>(i)];
    if (o < 0 || o >= m || o == i || pb.opposite[static_cast<std::size_t>(o)] != i) {
      throw ValidationError("pair batch: opposite map must be a fixed-point-free involution");
    }
  }
}

std::vector<std::int64_t> paired_opposites(std::int64_t b) {
  if (b < 1) throw ValidationError("paired_opposites: b must be >= 1");
  std::vector<std::int64_t> opp(static_cast<std::size_t>(2 * b));
  for (std::int64_t i = 0; i < b; ++i) {
    opp[static_cast<std::size_t>(i)] = b + i;
    opp[static_cast<std::size_t>(b + i)] = i;
  }
  return opp;
}

torch::Tensor opposite_index(const PairBatch& pb) { return torch::tensor(pb.opposite, torch::kInt64); }

torch::Tensor nt_xent(const PairBatch& pb, Reduction reduction) {
  validate(pb, false);
  const auto sim = similarities(pb);
  const auto [a, p] = positive_pairs(sim.m, sim.v);
  const auto pos = sim.s.index({a, p});
  return reduce(sim.denom.index_select(0, a).log() - pos, reduction);
}

torch::Tensor cobra_loss(const PairBatch& pb, const LossOptions& opts) {
  if (opts.opposite_weight == 0.0) return nt_xent(pb, opts.reduction);
  validate(pb, true);
  if (!(opts.eps_num > 0.0)) throw ValidationError("cobra_loss: eps_num must be > 0");
  const auto sim = similarities(pb);
  const auto [a, p] = positive_pairs(sim.m, sim.v);
  const auto opp_rows = opposite_index(pb).repeat({sim.v}).index_select(0, a);
  const auto num = sim.s.index({a, p}).exp() - opts.opposite_weight * sim.s.index({a, opp_rows}).exp();
  const auto terms = sim.denom.index_select(0, a).log() - num.clamp_min(opts.eps_num).log();
  return reduce(terms, opts.reduction);
}

torch::Tensor opposite_mass(const PairBatch& pb) {
  validate(pb, true);
  const auto sim = similarities(pb);
  const auto anchors = torch::arange(sim.m * sim.v, torch::kInt64);
  const auto opp_rows = opposite_index(pb).repeat({sim.v});
  return sim.s.index({anchors, opp_rows}).exp().sum() / sim.denom.sum();
}

torch::Tensor cls_loss(const torch::Tensor& p_anom, const torch::Tensor& labels) {
  if (p_anom.numel() == 0 || p_anom.numel() != labels.numel()) {
    throw ValidationError("cls_loss: probabilities and labels must be non-empty and of equal length");
  }
  const auto y = labels.to(p_anom.dtype()).reshape({-1});
  if (!torch::logical_or(y == 0, y == 1).all().item<bool>()) throw ValidationError("cls_loss: labels must be 0 or 1");
  const auto p = p_anom.reshape({-1}).clamp(kProbClamp, 1.0 - kProbClamp);
  return -(y * p.log() + (1 - y) * (1 - p).log()).mean();
}

torch::Tensor total_loss(const PairBatch& pb, const torch::Tensor& p_anom, const torch::Tensor& labels,
                         const LossOptions& opts) {
  auto loss = cobra_loss(pb, opts);
  if (opts.cls_weight != 0.0) loss = loss + opts.cls_weight * cls_loss(p_anom, labels);
  return loss;
}

}  // namespace cobra::losses
