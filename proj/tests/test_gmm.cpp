#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cobra/gmm.hpp"

using namespace cobra;
using namespace cobra::crafter;

namespace {

double log_density_oracle(const std::vector<double>& w, const Matrix& mu, const Matrix& var, const double* x) {
  double total = 0.0;
  for (std::int64_t j = 0; j < mu.rows; ++j) {
    double dens = w[j];
    for (std::int64_t k = 0; k < mu.cols; ++k) {
      const double v = var.row(j)[k], d = x[k] - mu.row(j)[k];
      dens *= std::exp(-0.5 * d * d / v) / std::sqrt(2.0 * M_PI * v);
    }
    total += dens;
  }
  return std::log(total);
}

Matrix two_clusters(std::int64_t n, Seed seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix x(n, 2);
  for (std::int64_t i = 0; i < n; ++i) {
    const double cx = i % 3 == 0 ? 6.0 : -2.0;
    x.row(i)[0] = cx + 0.5 * g(rng);
    x.row(i)[1] = -cx + 0.5 * g(rng);
  }
  return x;
}

}  // namespace

TEST(Gmm, LogLikelihoodMatchesDensityFormula) {
  Matrix mu(2, 3), var(2, 3);
  const double m[] = {0.0, 1.0, -1.0, 2.0, 0.5, 0.0};
  const double v[] = {1.0, 0.5, 2.0, 0.3, 1.5, 0.8};
  std::copy(m, m + 6, mu.data.begin());
  std::copy(v, v + 6, var.data.begin());
  const std::vector<double> w{0.3, 0.7};
  const GaussianMixture gmm(w, mu, var);
  const double pts[][3] = {{0.0, 0.0, 0.0}, {1.0, 2.0, -1.0}, {2.0, 0.5, 0.1}, {-3.0, 4.0, 1.0}};
  for (const auto& p : pts) EXPECT_NEAR(gmm.log_likelihood(p), log_density_oracle(w, mu, var, p), 1e-12);
}

TEST(Gmm, FarPointsStayFinite) {
  Matrix mu(1, 1), var(1, 1);
  mu.data = {0.0};
  var.data = {1.0};
  const GaussianMixture gmm({1.0}, mu, var);
  const double far = 1e3;
  EXPECT_NEAR(gmm.log_likelihood(&far), -0.5 * 1e6 - 0.5 * std::log(2.0 * M_PI), 1e-6);
}

TEST(Gmm, FitRecoversSeparatedClusters) {
  const auto x = two_clusters(600, 1);
  GmmOptions o;
  o.components = 2;
  o.seed = 3;
  const auto gmm = GaussianMixture::fit(x, o);
  ASSERT_EQ(gmm.components(), 2);
  int hi = gmm.means().row(0)[0] > gmm.means().row(1)[0] ? 0 : 1;
  EXPECT_NEAR(gmm.means().row(hi)[0], 6.0, 0.15);
  EXPECT_NEAR(gmm.means().row(1 - hi)[0], -2.0, 0.15);
  EXPECT_NEAR(gmm.weights()[hi], 1.0 / 3.0, 0.03);
  EXPECT_NEAR(gmm.variances().row(hi)[1], 0.25, 0.06);
  double sum = 0;
  for (double w : gmm.weights()) sum += w;
  EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(Gmm, FitIsDeterministicAndRestartsHelp) {
  const auto x = two_clusters(300, 2);
  GmmOptions o;
  o.components = 3;
  o.seed = 8;
  const auto a = GaussianMixture::fit(x, o), b = GaussianMixture::fit(x, o);
  EXPECT_EQ(a.means().data, b.means().data);
  auto mean_ll = [&](const GaussianMixture& g) {
    double s = 0;
    for (double v : g.log_likelihood(x)) s += v;
    return s;
  };
  o.restarts = 1;
  const auto one = GaussianMixture::fit(x, o);
  o.restarts = 5;
  EXPECT_GE(mean_ll(GaussianMixture::fit(x, o)), mean_ll(one) - 1e-9);
}

TEST(Gmm, VarianceFloorHoldsOnDuplicates) {
  Matrix x(20, 2);
  for (std::int64_t i = 0; i < 20; ++i) x.row(i)[0] = x.row(i)[1] = i < 10 ? 0.0 : 1.0;
  GmmOptions o;
  o.components = 2;
  const auto gmm = GaussianMixture::fit(x, o);
  for (double v : gmm.variances().data) EXPECT_GE(v, o.var_floor);
  for (double ll : gmm.log_likelihood(x)) EXPECT_TRUE(std::isfinite(ll));
}

TEST(Gmm, RejectsTooFewPoints) {
  Matrix x(2, 2);
  GmmOptions o;
  o.components = 5;
  EXPECT_THROW(GaussianMixture::fit(x, o), ValidationError);
}
