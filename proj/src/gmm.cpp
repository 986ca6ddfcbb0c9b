#include "cobra/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cobra::crafter {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

double logsumexp(const double* v, int n) {
  double m = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) m = std::max(m, v[i]);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += std::exp(v[i] - m);
  return m + std::log(s);
}

std::vector<std::int64_t> kmeanspp_seeds(const Matrix& x, int k, Rng& rng) {
  std::vector<std::int64_t> seeds;
  std::vector<double> dist(static_cast<std::size_t>(x.rows), std::numeric_limits<double>::infinity());
  seeds.push_back(uniform_int(rng, 0, x.rows - 1));
  while (static_cast<int>(seeds.size()) < k) {
    const double* c = x.row(seeds.back());
    double total = 0.0;
    for (std::int64_t i = 0; i < x.rows; ++i) {
      const double* r = x.row(i);
      double d = 0.0;
      for (std::int64_t j = 0; j < x.cols; ++j) d += (r[j] - c[j]) * (r[j] - c[j]);
      dist[static_cast<std::size_t>(i)] = std::min(dist[static_cast<std::size_t>(i)], d);
      total += dist[static_cast<std::size_t>(i)];
    }
    if (total <= 0.0) {
      seeds.push_back(uniform_int(rng, 0, x.rows - 1));
      continue;
    }
    double u = uniform(rng, 0.0, total);
    std::int64_t pick = x.rows - 1;
    for (std::int64_t i = 0; i < x.rows; ++i) {
      u -= dist[static_cast<std::size_t>(i)];
      if (u <= 0.0) {
        pick = i;
        break;
      }
    }
    seeds.push_back(pick);
  }
  return seeds;
}

struct FitResult {
  GaussianMixture model;
  double mean_loglik = -std::numeric_limits<double>::infinity();
};

FitResult fit_once(const Matrix& x, const GmmOptions& opts, Rng& rng) {
  const auto n = x.rows;
  const auto d = x.cols;
  const int k = opts.components;

  std::vector<double> global_mean(static_cast<std::size_t>(d), 0.0), global_var(static_cast<std::size_t>(d), 0.0);
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < d; ++j) global_mean[static_cast<std::size_t>(j)] += x.row(i)[j];
  }
  for (auto& m : global_mean) m /= static_cast<double>(n);
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < d; ++j) {
      const double e = x.row(i)[j] - global_mean[static_cast<std::size_t>(j)];
      global_var[static_cast<std::size_t>(j)] += e * e;
    }
  }
  for (auto& v : global_var) v = std::max(v / static_cast<double>(n), opts.var_floor);

  Matrix means(k, d), vars(k, d);
  std::vector<double> weights(static_cast<std::size_t>(k), 1.0 / k);
  const auto seeds = kmeanspp_seeds(x, k, rng);
  for (int c = 0; c < k; ++c) {
    std::copy_n(x.row(seeds[static_cast<std::size_t>(c)]), d, means.row(c));
    std::copy(global_var.begin(), global_var.end(), vars.row(c));
  }

  Matrix resp(n, k);
  double prev = -std::numeric_limits<double>::infinity();
  double mean_ll = prev;
  for (int iter = 0; iter < opts.max_iter; ++iter) {
    // E-step.
    std::vector<double> log_norm(static_cast<std::size_t>(k));
    for (int c = 0; c < k; ++c) {
      double logdet = 0.0;
      for (std::int64_t j = 0; j < d; ++j) logdet += std::log(vars.row(c)[j]);
      log_norm[static_cast<std::size_t>(c)] = std::log(std::max(weights[static_cast<std::size_t>(c)], 1e-300)) -
                                              0.5 * (static_cast<double>(d) * kLog2Pi + logdet);
    }
    double total_ll = 0.0;
    std::vector<double> lp(static_cast<std::size_t>(k));
    for (std::int64_t i = 0; i < n; ++i) {
      const double* xi = x.row(i);
      for (int c = 0; c < k; ++c) {
        double q = 0.0;
        const double* mu = means.row(c);
        const double* var = vars.row(c);
        for (std::int64_t j = 0; j < d; ++j) {
          const double e = xi[j] - mu[j];
          q += e * e / var[j];
        }
        lp[static_cast<std::size_t>(c)] = log_norm[static_cast<std::size_t>(c)] - 0.5 * q;
      }
      const double lse = logsumexp(lp.data(), k);
      total_ll += lse;
      for (int c = 0; c < k; ++c) resp.row(i)[c] = std::exp(lp[static_cast<std::size_t>(c)] - lse);
    }
    mean_ll = total_ll / static_cast<double>(n);
    if (iter > 0 && std::fabs(mean_ll - prev) <= opts.tol * std::max(1.0, std::fabs(prev))) break;
    prev = mean_ll;

    // M-step.
    for (int c = 0; c < k; ++c) {
      double nk = 0.0;
      for (std::int64_t i = 0; i < n; ++i) nk += resp.row(i)[c];
      double* mu = means.row(c);
      double* var = vars.row(c);
      if (nk < 1e-10) {
        // Dead component: reseed on a random point.
        std::copy_n(x.row(uniform_int(rng, 0, n - 1)), d, mu);
        std::copy(global_var.begin(), global_var.end(), var);
        weights[static_cast<std::size_t>(c)] = 1.0 / static_cast<double>(n);
        continue;
      }
      std::fill_n(mu, d, 0.0);
      for (std::int64_t i = 0; i < n; ++i) {
        const double r = resp.row(i)[c];
        const double* xi = x.row(i);
        for (std::int64_t j = 0; j < d; ++j) mu[j] += r * xi[j];
      }
      for (std::int64_t j = 0; j < d; ++j) mu[j] /= nk;
      std::fill_n(var, d, 0.0);
      for (std::int64_t i = 0; i < n; ++i) {
        const double r = resp.row(i)[c];
        const double* xi = x.row(i);
        for (std::int64_t j = 0; j < d; ++j) var[j] += r * (xi[j] - mu[j]) * (xi[j] - mu[j]);
      }
      for (std::int64_t j = 0; j < d; ++j) var[j] = std::max(var[j] / nk, opts.var_floor);
      weights[static_cast<std::size_t>(c)] = nk / static_cast<double>(n);
    }
    double wsum = 0.0;
    for (double w : weights) wsum += w;
    for (auto& w : weights) w /= wsum;
  }
  FitResult out{GaussianMixture(weights, means, vars), mean_ll};
  // Final score with the returned parameters.
  double total = 0.0;
  for (std::int64_t i = 0; i < n; ++i) total += out.model.log_likelihood(x.row(i));
  out.mean_loglik = total / static_cast<double>(n);
  return out;
}

}  // namespace

Matrix Matrix::from_tensor(const torch::Tensor& t) {
  if (t.dim() != 2) throw ValidationError("Matrix::from_tensor expects a 2-d tensor");
  const auto c = t.detach().to(torch::kCPU, torch::kFloat64).contiguous();
  Matrix m(c.size(0), c.size(1));
  std::copy_n(c.data_ptr<double>(), m.data.size(), m.data.begin());
  return m;
}

torch::Tensor Matrix::to_tensor() const {
  auto t = torch::empty({rows, cols}, torch::kFloat64);
  std::copy(data.begin(), data.end(), t.data_ptr<double>());
  return t;
}

GaussianMixture::GaussianMixture(std::vector<double> weights, Matrix means, Matrix variances)
    : weights_(std::move(weights)), means_(std::move(means)), variances_(std::move(variances)) {
  if (weights_.empty() || static_cast<std::int64_t>(weights_.size()) != means_.rows ||
      means_.rows != variances_.rows || means_.cols != variances_.cols) {
    throw ValidationError("GaussianMixture: inconsistent parameter shapes");
  }
  for (double v : variances_.data) {
    if (!(v > 0.0)) throw ValidationError("GaussianMixture: variances must be positive");
  }
  precompute();
}

void GaussianMixture::precompute() {
  log_norm_.assign(weights_.size(), 0.0);
  for (int c = 0; c < components(); ++c) {
    double logdet = 0.0;
    for (std::int64_t j = 0; j < dim(); ++j) logdet += std::log(variances_.row(c)[j]);
    log_norm_[static_cast<std::size_t>(c)] = std::log(std::max(weights_[static_cast<std::size_t>(c)], 1e-300)) -
                                             0.5 * (static_cast<double>(dim()) * kLog2Pi + logdet);
  }
}

GaussianMixture GaussianMixture::fit(const Matrix& x, const GmmOptions& opts) {
  if (opts.components < 1) throw ValidationError("GMM needs at least one component");
  if (x.rows < opts.components) {
    throw ValidationError("GMM fit: " + std::to_string(x.rows) + " samples is fewer than " +
                          std::to_string(opts.components) + " components");
  }
  for (double v : x.data) {
    if (!std::isfinite(v)) throw ValidationError("GMM fit: non-finite embedding value");
  }
  FitResult best;
  for (int r = 0; r < std::max(1, opts.restarts); ++r) {
    Rng rng = make_rng(derive_seed(opts.seed, static_cast<std::uint64_t>(r)));
    auto candidate = fit_once(x, opts, rng);
    if (r == 0 || candidate.mean_loglik > best.mean_loglik) best = std::move(candidate);
  }
  return best.model;
}

double GaussianMixture::log_likelihood(const double* x) const {
  std::vector<double> lp(weights_.size());
  for (int c = 0; c < components(); ++c) {
    const double* mu = means_.row(c);
    const double* var = variances_.row(c);
    double q = 0.0;
    for (std::int64_t j = 0; j < dim(); ++j) {
      const double e = x[j] - mu[j];
      q += e * e / var[j];
    }
    lp[static_cast<std::size_t>(c)] = log_norm_[static_cast<std::size_t>(c)] - 0.5 * q;
  }
  return logsumexp(lp.data(), components());
}

std::vector<double> GaussianMixture::log_likelihood(const Matrix& x) const {
  if (x.cols != dim()) throw ValidationError("GMM: dimension mismatch");
  std::vector<double> out(static_cast<std::size_t>(x.rows));
  for (std::int64_t i = 0; i < x.rows; ++i) out[static_cast<std::size_t>(i)] = log_likelihood(x.row(i));
  return out;
}

}  // namespace cobra::crafter
