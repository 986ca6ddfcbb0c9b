#include <gtest/gtest.h>

#include <cmath>

#include "cobra/losses.hpp"
#include "oracles.hpp"

using namespace cobra;
using namespace cobra::losses;

namespace {

torch::Tensor randn64(std::int64_t m, std::int64_t d) { return torch::randn({m, d}, torch::kFloat64); }

PairBatch random_batch(std::int64_t b, std::int64_t d, bool adv, double t) {
  PairBatch pb;
  pb.z1 = randn64(2 * b, d);
  pb.z2 = pb.z1 + 0.3 * randn64(2 * b, d);
  if (adv) pb.z_adv = pb.z1 + 0.5 * randn64(2 * b, d);
  pb.opposite = paired_opposites(b);
  pb.labels = torch::cat({torch::zeros({b}), torch::ones({b})});
  pb.temperature = t;
  return pb;
}

std::vector<oracle::Rows> rows_of(const PairBatch& pb) {
  std::vector<oracle::Rows> v{oracle::to_rows(pb.z1), oracle::to_rows(pb.z2)};
  if (pb.z_adv.defined()) v.push_back(oracle::to_rows(pb.z_adv));
  return v;
}

}  // namespace

TEST(Losses, NtXentTwoOrthogonalSamples) {
  // Two samples on orthogonal axes, both views identical, t = 1: each of the
  // four anchors sees e on its positive and 1 + e + 1 in the denominator.
  PairBatch pb;
  pb.z1 = torch::eye(2, torch::kFloat64);
  pb.z2 = torch::eye(2, torch::kFloat64);
  pb.temperature = 1.0;
  const double e = std::exp(1.0);
  const double per_anchor = std::log((e + 2.0) / e);
  EXPECT_NEAR(per_anchor, 0.5514, 1e-4);
  EXPECT_NEAR(nt_xent(pb).item<double>(), 4.0 * per_anchor, 1e-12);
  EXPECT_NEAR(nt_xent(pb, Reduction::mean).item<double>(), per_anchor, 1e-12);
}

TEST(Losses, MatchesLoopOracle) {
  torch::manual_seed(1);
  for (int trial = 0; trial < 20; ++trial) {
    const bool adv = trial % 2 == 0;
    const double t = 0.2 + 0.1 * (trial % 5);
    auto pb = random_batch(1 + trial % 4, 5, adv, t);
    const auto views = rows_of(pb);
    const double ref_nt = oracle::contrastive_loop(views, t);
    const double ref_cobra = oracle::contrastive_loop(views, t, pb.opposite, 1.0, 1e-8);
    EXPECT_NEAR(nt_xent(pb).item<double>(), ref_nt, 1e-6 * std::abs(ref_nt));
    EXPECT_NEAR(cobra_loss(pb).item<double>(), ref_cobra, 1e-6 * std::abs(ref_cobra));
  }
}

TEST(Losses, MeanDividesByTermCount) {
  torch::manual_seed(2);
  auto pb = random_batch(3, 4, true, 0.5);
  const double terms = 6.0 * 3 * 2;  // 6 samples x 3 views x 2 positives
  EXPECT_NEAR(cobra_loss(pb, {1e-8, 1.0, 1.0, Reduction::mean}).item<double>(),
              cobra_loss(pb).item<double>() / terms, 1e-12);
}

TEST(Losses, ZeroOppositeWeightIsNtXent) {
  torch::manual_seed(3);
  auto pb = random_batch(3, 6, true, 0.5);
  LossOptions o;
  o.opposite_weight = 0.0;
  EXPECT_DOUBLE_EQ(cobra_loss(pb, o).item<double>(), nt_xent(pb).item<double>());
}

TEST(Losses, OppositeTermOnlyAddsPenalty) {
  torch::manual_seed(4);
  for (int i = 0; i < 10; ++i) {
    auto pb = random_batch(2, 4, i % 2 == 0, 0.5);
    EXPECT_GE(cobra_loss(pb).item<double>(), nt_xent(pb).item<double>());
  }
}

TEST(Losses, ClampedWhenOppositeMatchesPositive) {
  // Every row identical: the numerator is exactly zero and the clamp caps the term.
  PairBatch pb;
  pb.z1 = torch::ones({2, 3}, torch::kFloat64);
  pb.z2 = torch::ones({2, 3}, torch::kFloat64);
  pb.opposite = paired_opposites(1);
  pb.temperature = 0.5;
  const double denom = 3.0 * std::exp(2.0);
  EXPECT_NEAR(cobra_loss(pb).item<double>(), 4.0 * -std::log(1e-8 / denom), 1e-9);
}

TEST(Losses, PermutationInvariant) {
  torch::manual_seed(5);
  auto pb = random_batch(3, 4, true, 0.5);
  const std::vector<std::int64_t> perm{4, 0, 5, 2, 1, 3};
  std::vector<std::int64_t> inv(perm.size());
  for (std::size_t k = 0; k < perm.size(); ++k) inv[perm[k]] = static_cast<std::int64_t>(k);
  const auto idx = torch::tensor(perm, torch::kInt64);
  PairBatch q = pb;
  q.z1 = pb.z1.index_select(0, idx);
  q.z2 = pb.z2.index_select(0, idx);
  q.z_adv = pb.z_adv.index_select(0, idx);
  q.labels = pb.labels.index_select(0, idx);
  for (std::size_t k = 0; k < perm.size(); ++k) q.opposite[k] = inv[pb.opposite[perm[k]]];
  EXPECT_NEAR(cobra_loss(q).item<double>(), cobra_loss(pb).item<double>(), 1e-10);
  EXPECT_NEAR(nt_xent(q).item<double>(), nt_xent(pb).item<double>(), 1e-10);
}

TEST(Losses, ScaleInvariantEmbeddings) {
  torch::manual_seed(6);
  auto pb = random_batch(2, 4, false, 0.5);
  auto q = pb;
  q.z1 = pb.z1 * 7.0;
  q.z2 = pb.z2 * 0.1;
  EXPECT_NEAR(cobra_loss(q).item<double>(), cobra_loss(pb).item<double>(), 1e-10);
}

TEST(Losses, OppositeMassIsAShare) {
  torch::manual_seed(7);
  for (int i = 0; i < 10; ++i) {
    const auto m = opposite_mass(random_batch(1 + i % 3, 4, i % 2 == 1, 0.3)).item<double>();
    EXPECT_GT(m, 0.0);
    EXPECT_LT(m, 1.0);
  }
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  torch::manual_seed(8);
  for (int trial = 0; trial < 6; ++trial) {
    auto pb = random_batch(1 + trial % 3, 4, trial % 2 == 0, 0.5);
    std::vector<torch::Tensor> leaves{pb.z1, pb.z2};
    if (pb.z_adv.defined()) leaves.push_back(pb.z_adv);
    auto with = [&](const std::vector<torch::Tensor>& z) {
      PairBatch q = pb;
      q.z1 = z[0];
      q.z2 = z[1];
      if (z.size() > 2) q.z_adv = z[2];
      return q;
    };
    for (bool opp : {false, true}) {
      std::vector<torch::Tensor> vars;
      for (const auto& l : leaves) vars.push_back(l.clone().requires_grad_(true));
      const auto loss = opp ? cobra_loss(with(vars)) : nt_xent(with(vars));
      const auto grads = torch::autograd::grad({loss}, vars);
      const auto num = oracle::finite_difference(
          [&](const std::vector<torch::Tensor>& z) {
            return (opp ? cobra_loss(with(z)) : nt_xent(with(z))).item<double>();
          },
          leaves);
      for (std::size_t k = 0; k < vars.size(); ++k) EXPECT_LT(oracle::max_relative_error(grads[k], num[k]), 1e-4);
    }
  }
}

TEST(Losses, ClsLossMatchesLoop) {
  const auto p = torch::tensor({0.1, 0.8, 0.5, 1.0, 0.0}, torch::kFloat64);
  const auto y = torch::tensor({0.0, 1.0, 1.0, 1.0, 0.0}, torch::kFloat64);
  EXPECT_NEAR(cls_loss(p, y).item<double>(), oracle::bce_loop({0.1, 0.8, 0.5, 1.0, 0.0}, {0, 1, 1, 1, 0}), 1e-12);
}

TEST(Losses, ClsLossPerfectPredictionIsTiny) {
  const auto y = torch::tensor({0.0, 1.0, 1.0, 0.0}, torch::kFloat64);
  const auto l = cls_loss(y, y).item<double>();
  EXPECT_GT(l, 0.0);
  EXPECT_LT(l, 2e-7);
}

TEST(Losses, TotalIsCobraPlusWeightedCls) {
  torch::manual_seed(9);
  auto pb = random_batch(2, 4, true, 0.5);
  const auto p = torch::rand({4}, torch::kFloat64);
  LossOptions o;
  o.cls_weight = 0.3;
  EXPECT_NEAR(total_loss(pb, p, pb.labels, o).item<double>(),
              cobra_loss(pb, o).item<double>() + 0.3 * cls_loss(p, pb.labels).item<double>(), 1e-12);
}

TEST(Losses, RejectsBadInput) {
  auto pb = random_batch(1, 3, false, 0.5);
  auto bad = pb;
  bad.temperature = 0.0;
  EXPECT_THROW(nt_xent(bad), ValidationError);
  bad = pb;
  bad.opposite = {0, 1};
  EXPECT_THROW(cobra_loss(bad), ValidationError);
  bad = pb;
  bad.z1 = pb.z1.slice(0, 0, 1);
  bad.z2 = pb.z2.slice(0, 0, 1);
  EXPECT_THROW(nt_xent(bad), ValidationError);
  EXPECT_THROW(cls_loss(torch::tensor({0.5}), torch::tensor({2.0})), ValidationError);
  EXPECT_THROW(paired_opposites(0), ValidationError);
}
