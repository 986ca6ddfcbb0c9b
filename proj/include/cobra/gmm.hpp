#pragma once

#include <vector>

#include "cobra/common.hpp"

namespace cobra::crafter {

/// Row-major n x d matrix of doubles.
struct Matrix {
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::int64_t r, std::int64_t c) : rows(r), cols(c), data(static_cast<std::size_t>(r * c), 0.0) {}

  double* row(std::int64_t i) { return data.data() + i * cols; }
  const double* row(std::int64_t i) const { return data.data() + i * cols; }

  static Matrix from_tensor(const torch::Tensor& t);
  torch::Tensor to_tensor() const;
};

struct GmmOptions {
  int components = 5;
  int restarts = 3;
  int max_iter = 200;
  double tol = 1e-6;  // relative change in mean log-likelihood
  double var_floor = 1e-6;
  Seed seed = 0;
};

/// Diagonal-covariance Gaussian mixture.
class GaussianMixture {
 public:
  GaussianMixture() = default;
  GaussianMixture(std::vector<double> weights, Matrix means, Matrix variances);

  /// EM from k-means++ seeds; the restart with the best final log-likelihood wins.
  static GaussianMixture fit(const Matrix& x, const GmmOptions& opts);

  /// log sum_j w_j N(x; mu_j, diag(var_j)) for one point of length dim().
  double log_likelihood(const double* x) const;
  std::vector<double> log_likelihood(const Matrix& x) const;

  int components() const { return static_cast<int>(weights_.size()); }
  std::int64_t dim() const { return means_.cols; }
  const std::vector<double>& weights() const { return weights_; }
  const Matrix& means() const { return means_; }
  const Matrix& variances() const { return variances_; }

 private:
  void precompute();

  std::vector<double> weights_;
  Matrix means_;
  Matrix variances_;
  std::vector<double> log_norm_;  // log w_j - 0.5 * sum(log(2 pi var_j))
};

}  // namespace cobra::crafter
