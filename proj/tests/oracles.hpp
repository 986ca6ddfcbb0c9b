#pragma once

// Independent reference implementations used by the unit and acceptance tests.
// Plain loops over std::vector<double>; nothing here calls into the library.

#include <functional>
#include <vector>

#include <torch/torch.h>

namespace oracle {

using Rows = std::vector<std::vector<double>>;

Rows to_rows(const torch::Tensor& t);

/// Contrastive loss summed over every (anchor, positive) pair of a batch of M
/// samples seen through views.size() views. With opposite empty it is plain
/// NT-Xent; otherwise the positive numerator loses w * exp(cos(anchor, z1[opp]) / t)
/// and is floored at eps before the log.
double contrastive_loop(const std::vector<Rows>& views, double t, const std::vector<std::int64_t>& opposite = {},
                        double w = 1.0, double eps = 1e-8);

/// Mean binary cross-entropy with p clamped to [1e-7, 1 - 1e-7].
double bce_loop(const std::vector<double>& p, const std::vector<double>& y);

struct SweepMetrics {
  double auroc = 0.0;
  double aupr = 0.0;
  double fpr95 = 0.0;
};

/// AUROC by pair counting, AP and FPR@95%TPR by scanning every distinct
/// threshold "score >= tau". Labels 1 are the positive (anomaly) class.
SweepMetrics sweep_metrics(const std::vector<double>& scores, const std::vector<int>& labels);

/// One-sample Kolmogorov-Smirnov statistic against Uniform(0, 1).
double ks_uniform(std::vector<double> values);

/// Central differences of a scalar function with respect to every element of
/// the float64 leaf tensors in `inputs`.
std::vector<torch::Tensor> finite_difference(const std::function<double(const std::vector<torch::Tensor>&)>& f,
                                             const std::vector<torch::Tensor>& inputs, double h = 1e-5);

/// max over elements of |a - n| / max(|a|, |n|, floor).
double max_relative_error(const torch::Tensor& analytic, const torch::Tensor& numeric, double floor = 1e-6);

}  // namespace oracle
