#include "cobra/attacks.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>

namespace cobra::attacks {

namespace {

torch::Tensor per_sample_norm(const torch::Tensor& t) {
  return t.flatten(1).norm(2, 1).view({-1, 1, 1, 1});
}

torch::Tensor random_start(const torch::Tensor& x, const AttackConfig& cfg, Seed seed) {
  auto gen = at::detail::createCPUGenerator(seed);
  if (cfg.norm == Norm::linf) {
    const auto u = torch::rand(x.sizes(), gen, x.options());
    return project(x + (2.0 * u - 1.0) * cfg.epsilon, x, cfg.epsilon, cfg.norm);
  }
  const auto g = torch::randn(x.sizes(), gen, x.options());
  const auto r = torch::rand({x.size(0), 1, 1, 1}, gen, x.options());
  const auto dir = g / per_sample_norm(g).clamp_min(1e-12);
  return project(x + dir * r * cfg.epsilon, x, cfg.epsilon, cfg.norm);
}

torch::Tensor check_y(const torch::Tensor& x, const torch::Tensor& y) {
  if (y.numel() != x.size(0)) throw ValidationError("attack: need one direction per sample");
  const auto yd = y.to(x.dtype()).reshape({-1});
  if (!torch::logical_or(yd == 1, yd == -1).all().item<bool>()) {
    throw ValidationError("attack: directions must be +1 (normal) or -1 (anomaly)");
  }
  return yd;
}

torch::Tensor ascend(const torch::Tensor& x_adv, const torch::Tensor& grad, const AttackConfig& cfg) {
  if (cfg.norm == Norm::linf) return x_adv + cfg.step_size() * grad.sign();
  const auto n = per_sample_norm(grad);
  return x_adv + cfg.step_size() * torch::where(n > 0, grad / n.clamp_min(1e-30), torch::zeros_like(grad));
}

torch::Tensor input_gradient(const torch::Tensor& objective, const torch::Tensor& x_adv, const char* what) {
  auto grad = torch::autograd::grad({objective}, {x_adv}, {}, false, false, true)[0];
  if (!grad.defined()) grad = torch::zeros_like(x_adv);
  if (!torch::isfinite(grad).all().item<bool>()) {
    throw NumericError(std::string(what) + ": non-finite input gradient");
  }
  return grad;
}

}  // namespace

std::string_view to_string(Norm norm) { return norm == Norm::linf ? "linf" : "l2"; }

Norm parse_norm(std::string_view name) {
  if (name == "linf") return Norm::linf;
  if (name == "l2") return Norm::l2;
  throw ValidationError("unknown attack norm '" + std::string(name) + "'");
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ValidationError("attack epsilon must be finite and >= 0");
  if (steps < 1) throw ValidationError("attack steps must be >= 1");
  if (restarts < 1) throw ValidationError("attack restarts must be >= 1");
  if (alpha < 0.0) throw ValidationError("attack alpha must be >= 0");
  if (norm == Norm::linf && step_size() > epsilon) throw ValidationError("attack alpha must not exceed epsilon");
}

nlohmann::json AttackConfig::to_json() const {
  return {{"epsilon", epsilon}, {"alpha", step_size()},  {"steps", steps},
          {"restarts", restarts}, {"norm", std::string(to_string(norm))}, {"random_init", random_init},
          {"seed", seed}};
}

torch::Tensor project(const torch::Tensor& x_adv, const torch::Tensor& x, double epsilon, Norm norm) {
  if (norm == Norm::linf) return torch::min(torch::max(x_adv, x - epsilon), x + epsilon).clamp(0.0, 1.0);
  const auto delta = x_adv - x;
  const auto n = per_sample_norm(delta);
  const auto scale = torch::where(n > epsilon, epsilon / n.clamp_min(1e-30), torch::ones_like(n));
  return (x + delta * scale).clamp(0.0, 1.0);
}

torch::Tensor score_attack_pgd(const ScoreFn& score, const torch::Tensor& x, const torch::Tensor& y,
                               const AttackConfig& cfg) {
  cfg.validate();
  check_image_batch(x, "score attack");
  const auto yd = check_y(x, y);
  const auto x0 = x.detach();
  torch::Tensor best, best_obj;
  for (int r = 0; r < cfg.restarts; ++r) {
    auto x_adv = cfg.random_init && cfg.epsilon > 0.0 ? random_start(x0, cfg, derive_seed(cfg.seed, static_cast<std::uint64_t>(r)))
                                                      : x0.clone();
    for (int step = 0; step < cfg.steps; ++step) {
      x_adv = x_adv.detach().requires_grad_(true);
      const auto objective = (score(x_adv).reshape({-1}) * yd).sum();
      const auto grad = input_gradient(objective, x_adv, "score attack");
      torch::NoGradGuard guard;
      x_adv = project(ascend(x_adv.detach(), grad, cfg), x0, cfg.epsilon, cfg.norm);
    }
    x_adv = x_adv.detach();
    torch::Tensor obj;
    {
      torch::NoGradGuard guard;
      obj = score(x_adv).reshape({-1}) * yd;
    }
    if (r == 0) {
      best = x_adv;
      best_obj = obj;
    } else {
      const auto better = obj > best_obj;
      best = torch::where(better.view({-1, 1, 1, 1}), x_adv, best);
      best_obj = torch::where(better, obj, best_obj);
    }
  }
  return best;
}

torch::Tensor fgsm_score_attack(const ScoreFn& score, const torch::Tensor& x, const torch::Tensor& y, double epsilon) {
  AttackConfig cfg;
  cfg.epsilon = epsilon;
  cfg.alpha = epsilon;
  cfg.steps = 1;
  cfg.restarts = 1;
  cfg.random_init = false;
  if (epsilon == 0.0) {
    check_image_batch(x, "fgsm");
    check_y(x, y);
    return x.detach().clone();
  }
  return score_attack_pgd(score, x, y, cfg);
}

torch::Tensor blackbox_score_attack(const ScoreFn& score, const torch::Tensor& x, const torch::Tensor& y,
                                    const AttackConfig& cfg, int queries) {
  if (queries < 1) throw ValidationError("blackbox attack: queries must be >= 1");
  if (cfg.norm != Norm::linf) throw ValidationError("blackbox attack supports linf only");
  cfg.validate();
  check_image_batch(x, "blackbox attack");
  const auto yd = check_y(x, y);
  torch::NoGradGuard guard;
  const auto x0 = x.detach();
  auto best = x0.clone();
  auto best_obj = score(best).reshape({-1}) * yd;
  if (cfg.epsilon == 0.0) return best;

  const auto n = x0.size(0), c = x0.size(1), h = x0.size(2), w = x0.size(3);
  const auto side0 = std::max<std::int64_t>(1, std::llround(0.25 * static_cast<double>(std::min(h, w))));
  Rng rng = make_rng(derive_seed(cfg.seed, "blackbox"));
  for (int q = 1; q < queries; ++q) {
    const double frac = 1.0 - static_cast<double>(q - 1) / static_cast<double>(std::max(1, queries - 1));
    const auto side = std::max<std::int64_t>(1, std::llround(static_cast<double>(side0) * frac));
    auto mask = torch::zeros({n, c, h, w}, torch::kFloat64);
    auto shift = torch::zeros({n, c, h, w}, torch::kFloat64);
    auto m = mask.accessor<double, 4>();
    auto d = shift.accessor<double, 4>();
    for (std::int64_t i = 0; i < n; ++i) {
      const auto top = uniform_int(rng, 0, h - side);
      const auto left = uniform_int(rng, 0, w - side);
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const double s = uniform(rng) < 0.5 ? -cfg.epsilon : cfg.epsilon;
        for (auto r = top; r < top + side; ++r) {
          for (auto col = left; col < left + side; ++col) {
            m[i][ch][r][col] = 1.0;
            d[i][ch][r][col] = s;
          }
        }
      }
    }
    const auto cand = torch::where(mask.to(x0.dtype()) > 0, x0 + shift.to(x0.dtype()), best);
    const auto proposal = project(cand, x0, cfg.epsilon, cfg.norm);
    const auto obj = score(proposal).reshape({-1}) * yd;
    const auto better = obj > best_obj;
    best = torch::where(better.view({-1, 1, 1, 1}), proposal, best);
    best_obj = torch::where(better, obj, best_obj);
  }
  return best;
}

torch::Tensor training_loss_at(nets::CobraNet& model, const torch::Tensor& x_adv, const TrainingAttackInputs& in) {
  const auto out = model->forward(x_adv);
  losses::PairBatch pb{in.z1, in.z2, out.z, in.opposite, in.labels, in.temperature};
  return losses::total_loss(pb, out.p_anom, in.labels, in.loss);
}

torch::Tensor pgd_training_attack(nets::CobraNet& model, const torch::Tensor& x, const TrainingAttackInputs& in,
                                  const AttackConfig& cfg) {
  cfg.validate();
  if (cfg.norm != Norm::linf) throw ValidationError("training attack is linf only");
  check_image_batch(x, "training attack");
  const auto x0 = x.detach();
  if (cfg.epsilon == 0.0) return x0.clone();
  TrainingAttackInputs fixed = in;
  fixed.z1 = in.z1.detach();
  fixed.z2 = in.z2.detach();
  auto x_adv = cfg.random_init ? random_start(x0, cfg, derive_seed(cfg.seed, std::uint64_t{0})) : x0.clone();
  for (int step = 0; step < cfg.steps; ++step) {
    x_adv = x_adv.detach().requires_grad_(true);
    const auto loss = training_loss_at(model, x_adv, fixed);
    const auto grad = input_gradient(loss, x_adv, "training attack");
    torch::NoGradGuard guard;
    x_adv = project(ascend(x_adv.detach(), grad, cfg), x0, cfg.epsilon, cfg.norm);
  }
  return x_adv.detach();
}

}  // namespace cobra::attacks
