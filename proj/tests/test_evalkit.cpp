#include <gtest/gtest.h>

#include <filesystem>

#include "cobra/data.hpp"
#include "cobra/evalkit.hpp"

using namespace cobra;
using namespace cobra::evalkit;

namespace {

nets::CobraNet model() {
  nets::ModelConfig cfg;
  cfg.input = {1, 28, 28};
  cfg.proj_dim = 16;
  auto m = nets::make_model(cfg, 5);
  m->eval();
  return m;
}

}  // namespace

TEST(EvalKit, ScoreAIsNegatedNearestCosine) {
  auto m = model();
  const auto train = torch::rand({20, 1, 28, 28});
  const auto bank = build_feature_bank(m, train, 7);
  EXPECT_EQ(bank.embeddings.size(0), 20);
  const auto x = torch::rand({5, 1, 28, 28});
  torch::NoGradGuard g;
  const auto z = m->forward(x).z.to(torch::kFloat64);
  const auto b = m->forward(train).z.to(torch::kFloat64);
  for (int i = 0; i < 5; ++i) {
    double best = -2.0;
    for (int j = 0; j < 20; ++j) {
      const double c = (z[i] * b[j]).sum().item<double>() / (z[i].norm().item<double>() * b[j].norm().item<double>());
      best = std::max(best, c);
    }
    EXPECT_NEAR(anomaly_score_A(bank, m, x)[i].item<double>(), -best, 1e-5);
  }
  EXPECT_TRUE(torch::allclose(anomaly_score_Aprime(m, x), m->forward(x).p_anom));
}

TEST(EvalKit, TrainingPointsScoreMinusOne) {
  auto m = model();
  const auto train = torch::rand({6, 1, 28, 28});
  const auto bank = build_feature_bank(m, train);
  torch::NoGradGuard g;
  EXPECT_TRUE(torch::allclose(anomaly_score_A(bank, m, train).to(torch::kFloat64),
                              torch::full({6}, -1.0, torch::kFloat64), 1e-5, 1e-5));
}

TEST(EvalKit, ZeroBudgetAttackEqualsClean) {
  auto m = model();
  const auto shapes = data::make_synthetic_shapes(40, 28, 1).images;
  const auto noise = data::make_noise_images(20, 28, 1, 2).images;
  const auto bank = build_feature_bank(m, shapes.slice(0, 0, 20));
  const auto test = torch::cat({shapes.slice(0, 20, 40), noise});
  std::vector<int> labels(40, 0);
  std::fill(labels.begin() + 20, labels.end(), 1);
  Condition pgd;
  pgd.name = "pgd-0eps";
  pgd.kind = ConditionKind::pgd;
  pgd.attack.epsilon = 0.0;
  pgd.attack.steps = 3;
  std::vector<TranscriptRow> rows;
  const auto rep = run_protocol(m, bank, test, labels, {{"p", 1}}, {pgd}, {ScoreVariant::A, ScoreVariant::A_prime},
                                {}, &rows);
  ASSERT_EQ(rep.records.size(), 4u);
  EXPECT_EQ(rep.records[0].condition, "clean");
  for (auto v : {ScoreVariant::A, ScoreVariant::A_prime}) {
    EXPECT_DOUBLE_EQ(rep.find("clean", v).metrics.auroc, rep.find("pgd-0eps", v).metrics.auroc);
  }
  EXPECT_EQ(rep.find("clean", ScoreVariant::A).n_anomaly, 20);
  EXPECT_EQ(rows.size(), 160u);
}

TEST(EvalKit, AttackDoesNotImproveDetection) {
  auto m = model();
  const auto shapes = data::make_synthetic_shapes(40, 28, 3).images;
  const auto noise = data::make_noise_images(20, 28, 1, 4).images;
  const auto bank = build_feature_bank(m, shapes.slice(0, 0, 20));
  const auto test = torch::cat({shapes.slice(0, 20, 40), noise});
  std::vector<int> labels(40, 0);
  std::fill(labels.begin() + 20, labels.end(), 1);
  Condition pgd;
  pgd.name = "pgd-5";
  pgd.kind = ConditionKind::pgd;
  pgd.attack.epsilon = 8.0 / 255.0;
  pgd.attack.steps = 5;
  const auto rep = run_protocol(m, bank, test, labels, {}, {pgd}, {ScoreVariant::A});
  EXPECT_LE(rep.find("pgd-5", ScoreVariant::A).metrics.auroc, rep.find("clean", ScoreVariant::A).metrics.auroc);
}

TEST(EvalKit, ReportRoundTripsAndRenders) {
  EvalReport rep;
  EvalRecord clean;
  clean.condition = "clean";
  clean.metrics = {0.912345, 0.8, 0.3};
  EvalRecord att = clean;
  att.condition = "pgd-100";
  att.attack = attacks::AttackConfig{}.to_json();
  att.metrics.auroc = 0.61;
  rep.records = {clean, att};
  rep.warnings = {"something odd"};
  rep.complete = false;
  const auto p = std::filesystem::temp_directory_path() / "cobra_report_test.txt";
  rep.write_text(p);
  rep.write_csv(p.string() + ".csv");
  const auto back = EvalReport::read_text(p);
  EXPECT_FALSE(back.complete);
  ASSERT_EQ(back.records.size(), 2u);
  EXPECT_DOUBLE_EQ(back.find("pgd-100", ScoreVariant::A).metrics.auroc, 0.61);
  EXPECT_EQ(back.warnings, rep.warnings);
  const auto table = back.render_table();
  EXPECT_NE(table.find("91.2 / 61.0"), std::string::npos) << table;
  EXPECT_NE(table.find("INCOMPLETE"), std::string::npos) << table;
}
