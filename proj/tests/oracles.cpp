#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace oracle {

Rows to_rows(const torch::Tensor& t) {
  const auto c = t.detach().to(torch::kFloat64).contiguous();
  Rows out(static_cast<std::size_t>(c.size(0)), std::vector<double>(static_cast<std::size_t>(c.size(1))));
  auto a = c.accessor<double, 2>();
  for (std::int64_t i = 0; i < c.size(0); ++i) {
    for (std::int64_t j = 0; j < c.size(1); ++j) out[i][j] = a[i][j];
  }
  return out;
}

namespace {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    ab += a[k] * b[k];
    aa += a[k] * a[k];
    bb += b[k] * b[k];
  }
  return ab / (std::max(std::sqrt(aa), 1e-12) * std::max(std::sqrt(bb), 1e-12));
}

}  // namespace

double contrastive_loop(const std::vector<Rows>& views, double t, const std::vector<std::int64_t>& opposite, double w,
                        double eps) {
  const std::size_t nv = views.size(), m = views[0].size();
  double total = 0.0;
  for (std::size_t v = 0; v < nv; ++v) {
    for (std::size_t i = 0; i < m; ++i) {
      const auto& anchor = views[v][i];
      double denom = 0.0;
      for (std::size_t u = 0; u < nv; ++u) {
        for (std::size_t j = 0; j < m; ++j) {
          if (u == v && j == i) continue;
          denom += std::exp(cosine(anchor, views[u][j]) / t);
        }
      }
      for (std::size_t u = 0; u < nv; ++u) {
        if (u == v) continue;
        double num = std::exp(cosine(anchor, views[u][i]) / t);
        if (!opposite.empty()) {
          num -= w * std::exp(cosine(anchor, views[0][static_cast<std::size_t>(opposite[i])]) / t);
          num = std::max(num, eps);
        }
        total += -std::log(num / denom);
      }
    }
  }
  return total;
}

double bce_loop(const std::vector<double>& p, const std::vector<double>& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::clamp(p[i], 1e-7, 1.0 - 1e-7);
    s += -(y[i] * std::log(q) + (1.0 - y[i]) * std::log(1.0 - q));
  }
  return s / static_cast<double>(p.size());
}

SweepMetrics sweep_metrics(const std::vector<double>& scores, const std::vector<int>& labels) {
  SweepMetrics m;
  double pos = 0, neg = 0;
  for (int l : labels) (l == 1 ? pos : neg) += 1;

  double wins = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  m.auroc = wins / (pos * neg);

  std::vector<double> taus = scores;
  std::sort(taus.begin(), taus.end(), std::greater<>());
  taus.erase(std::unique(taus.begin(), taus.end()), taus.end());
  double prev_recall = 0.0;
  m.fpr95 = 1.0;
  for (double tau : taus) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] >= tau) (labels[i] == 1 ? tp : fp) += 1;
    }
    const double recall = tp / pos;
    m.aupr += (recall - prev_recall) * (tp / (tp + fp));
    prev_recall = recall;
    if (recall >= 0.95) m.fpr95 = std::min(m.fpr95, fp / neg);
  }
  return m;
}

double ks_uniform(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  double d = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = std::clamp(values[i], 0.0, 1.0);
    d = std::max({d, (static_cast<double>(i) + 1.0) / n - v, v - static_cast<double>(i) / n});
  }
  return d;
}

std::vector<torch::Tensor> finite_difference(const std::function<double(const std::vector<torch::Tensor>&)>& f,
                                             const std::vector<torch::Tensor>& inputs, double h) {
  std::vector<torch::Tensor> work;
  for (const auto& x : inputs) work.push_back(x.detach().clone().to(torch::kFloat64).contiguous());
  std::vector<torch::Tensor> grads;
  for (auto& w : work) {
    auto g = torch::zeros_like(w);
    auto* p = w.data_ptr<double>();
    auto* gp = g.data_ptr<double>();
    for (std::int64_t k = 0; k < w.numel(); ++k) {
      const double orig = p[k];
      p[k] = orig + h;
      const double up = f(work);
      p[k] = orig - h;
      const double down = f(work);
      p[k] = orig;
      gp[k] = (up - down) / (2.0 * h);
    }
    grads.push_back(g);
  }
  return grads;
}

double max_relative_error(const torch::Tensor& analytic, const torch::Tensor& numeric, double floor) {
  const auto a = analytic.detach().to(torch::kFloat64).reshape({-1});
  const auto n = numeric.detach().to(torch::kFloat64).reshape({-1});
  const auto denom = torch::maximum(torch::maximum(a.abs(), n.abs()), torch::full_like(a, floor));
  return ((a - n).abs() / denom).max().item<double>();
}

}  // namespace oracle
