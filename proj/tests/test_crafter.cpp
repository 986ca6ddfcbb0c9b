#include <gtest/gtest.h>

#include <filesystem>

#include "cobra/crafter.hpp"
#include "cobra/data.hpp"
#include "oracles.hpp"

using namespace cobra;
using namespace cobra::crafter;

namespace {

const torch::Tensor& train_images() {
  static const auto x = data::make_synthetic_shapes(64, 28, 5).images;
  return x;
}

std::vector<TransformSpec> small_bank() {
  return {TransformSpec::defaults(augment::TransformId::jigsaw),
          TransformSpec::defaults(augment::TransformId::rotation),
          TransformSpec::defaults(augment::TransformId::cutout)};
}

const ThresholdModel& shared_model() {
  static const ThresholdModel tm = [] {
    CrafterConfig cfg;
    cfg.bank = small_bank();
    cfg.classifier.epochs = 2;
    cfg.classifier.batch_size = 32;
    cfg.gmm.components = 2;
    cfg.gmm.restarts = 1;
    return fit_crafter(train_images(), cfg, 11);
  }();
  return tm;
}

}  // namespace

TEST(Crafter, TransformDatasetLayout) {
  const auto x = train_images().slice(0, 0, 5);
  const auto ds = build_transform_dataset(x, small_bank(), 1);
  EXPECT_EQ(ds.images.size(0), 15);
  EXPECT_TRUE(torch::equal(ds.labels, torch::tensor({0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2}, torch::kInt64)));
  EXPECT_TRUE(torch::equal(ds.images, build_transform_dataset(x, small_bank(), 1).images));
}

TEST(Crafter, PvalueIsRankAmongTrainingLikelihoods) {
  const auto& tm = shared_model();
  const auto& ll = tm.train_loglik();
  ASSERT_TRUE(std::is_sorted(ll.begin(), ll.end()));
  const double n = static_cast<double>(ll.size());
  for (double q : {ll.front() - 1.0, ll[3], ll[10], ll.back() + 1.0, (ll[20] + ll[21]) / 2}) {
    double below = 0;
    for (double v : ll) below += v <= q;
    EXPECT_DOUBLE_EQ(tm.pvalue_from_loglik(q), (1.0 + below) / (n + 1.0));
  }
  EXPECT_DOUBLE_EQ(tm.pvalue_from_loglik(ll.front() - 1.0), 1.0 / (n + 1.0));
  EXPECT_DOUBLE_EQ(tm.pvalue_from_loglik(ll.back() + 1.0), 1.0);
}

TEST(Crafter, TrainingPvaluesAreRoughlyUniform) {
  const auto& tm = shared_model();
  const auto p = tm.pvalues(train_images());
  EXPECT_LT(oracle::ks_uniform(p), 0.1);
  for (double v : p) {
    EXPECT_GT(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Crafter, AcceptedCraftsScoreBelowLambda) {
  const auto& tm = shared_model();
  const auto res = craft_batch(train_images().slice(0, 0, 16), tm, small_bank(), 3, {10, 1});
  ASSERT_EQ(res.logs.size(), 16u);
  const auto rescored = tm.pvalues(res.images);
  for (std::size_t i = 0; i < res.logs.size(); ++i) {
    const auto& log = res.logs[i];
    EXPECT_GE(log.attempts, 1);
    EXPECT_LE(log.attempts, 10);
    if (!log.fallback_used) {
      EXPECT_TRUE(tm.is_anomalous(rescored[i]));
      EXPECT_NEAR(rescored[i], log.final_pvalue, 1e-12);
    } else {
      EXPECT_EQ(log.attempts, 10);
    }
  }
}

TEST(Crafter, LambdaOneAcceptsFirstCandidate) {
  const auto tm = shared_model().with_lambda(1.0);
  const auto res = craft_batch(train_images().slice(0, 0, 8), tm, small_bank(), 4);
  const auto s = summarize(res.logs);
  EXPECT_DOUBLE_EQ(s.accept_rate, 1.0);
  EXPECT_DOUBLE_EQ(s.mean_attempts, 1.0);
}

TEST(Crafter, BatchAndSingleAgree) {
  const auto& tm = shared_model();
  const auto x = train_images().slice(0, 0, 6);
  const auto batch = craft_batch(x, tm, small_bank(), 21);
  const auto [img, log] = craft_pseudo_anomaly(x[0], tm, small_bank(), 21, 10, x);
  EXPECT_TRUE(torch::equal(img, batch.images[0]));
  EXPECT_EQ(log.attempts, batch.logs[0].attempts);
  EXPECT_TRUE(torch::equal(batch.images, craft_batch(x, tm, small_bank(), 21).images));
}

TEST(Crafter, SaveLoadPreservesPvalues) {
  const auto& tm = shared_model();
  const auto p = std::filesystem::temp_directory_path() / "cobra_threshold_test.ckpt";
  tm.save(p);
  const auto back = ThresholdModel::load(p);
  const auto x = train_images().slice(0, 0, 10);
  EXPECT_EQ(back.pvalues(x), tm.pvalues(x));
  EXPECT_DOUBLE_EQ(back.lambda(), tm.lambda());
}

TEST(Crafter, RejectsBadLambda) {
  EXPECT_THROW(shared_model().with_lambda(0.0), ValidationError);
  EXPECT_THROW(shared_model().with_lambda(1.5), ValidationError);
}
