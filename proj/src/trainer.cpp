#include "cobra/trainer.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>

namespace cobra::trainer {

namespace {

torch::Tensor epoch_order(std::int64_t n, Seed seed, int epoch) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = make_rng(derive_seed(derive_seed(seed, "shuffle"), static_cast<std::uint64_t>(epoch)));
  std::shuffle(idx.begin(), idx.end(), rng);
  return torch::tensor(idx, torch::kInt64);
}

Seed step_seed(Seed root, int epoch, std::int64_t step) {
  return derive_seed(derive_seed(derive_seed(root, "step"), static_cast<std::uint64_t>(epoch)),
                     static_cast<std::uint64_t>(step));
}

void write_training_checkpoint(nets::CobraNet& model, Optimizer& opt, const std::filesystem::path& path,
                               const nlohmann::json& meta) {
  io::CheckpointData data;
  data.kind = io::CheckpointKind::model;
  data.meta = meta;
  data.meta["model_config"] = model->config().to_json();
  io::export_module(*model, "model/", data);
  const auto& bufs = opt.buffers();
  for (std::size_t i = 0; i < bufs.size(); ++i) data.add("optim/" + std::to_string(i), bufs[i]);
  io::write_checkpoint(path, data);
}

}  // namespace

std::string_view to_string(OptimizerKind kind) { return kind == OptimizerKind::lars ? "lars" : "sgd_momentum"; }

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "sgd_momentum" || name == "sgd") return OptimizerKind::sgd_momentum;
  if (name == "lars") return OptimizerKind::lars;
  throw ValidationError("unknown optimizer '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ValidationError("train.epochs must be >= 0");
  if (batch_size < 1) throw ValidationError("train.batch_size must be >= 1");
  if (!(peak_lr >= 0.0)) throw ValidationError("train.peak_lr must be >= 0");
  if (warmup_epochs < 0) throw ValidationError("train.warmup_epochs must be >= 0");
  if (weight_decay < 0.0 || momentum < 0.0 || momentum >= 1.0) {
    throw ValidationError("train.weight_decay must be >= 0 and train.momentum in [0, 1)");
  }
  if (!(temperature > 0.0)) throw ValidationError("loss.temperature must be > 0");
  if (!(grad_clip >= 0.0)) throw ValidationError("train.grad_clip must be >= 0");
  if (craft_max_iters < 1) throw ValidationError("crafter.max_iters must be >= 1");
  if (workers < 1) throw ValidationError("workers must be >= 1");
  attack.validate();
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"optimizer", std::string(to_string(optimizer))},
          {"peak_lr", peak_lr},
          {"warmup_epochs", warmup_epochs},
          {"weight_decay", weight_decay},
          {"momentum", momentum},
          {"lars_eta", lars_eta},
          {"grad_clip", grad_clip},
          {"temperature", temperature},
          {"eps_num", loss.eps_num},
          {"opposite_weight", loss.opposite_weight},
          {"cls_weight", loss.cls_weight},
          {"attack", attack.to_json()},
          {"craft_max_iters", craft_max_iters},
          {"seed", seed}};
}

double learning_rate(const TrainConfig& cfg, std::int64_t step, std::int64_t steps_per_epoch) {
  const auto warmup = static_cast<std::int64_t>(cfg.warmup_epochs) * steps_per_epoch;
  const auto total = static_cast<std::int64_t>(cfg.epochs) * steps_per_epoch;
  if (step < warmup) return cfg.peak_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  if (total <= warmup) return cfg.peak_lr;
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return 0.5 * cfg.peak_lr * (1.0 + std::cos(M_PI * progress));
}

PairImages make_pair_batch(const torch::Tensor& b_normal, const crafter::ThresholdModel& tm,
                           std::span<const augment::TransformSpec> bank, Seed seed, const TrainConfig& cfg) {
  check_image_batch(b_normal, "make_pair_batch");
  const auto b = b_normal.size(0);
  auto crafted = crafter::craft_batch(b_normal, tm, bank, derive_seed(seed, "craft"), {cfg.craft_max_iters, cfg.workers});
  PairImages out;
  out.raw = torch::cat({b_normal.detach(), crafted.images}, 0);
  out.craft_logs = std::move(crafted.logs);
  const Seed views = derive_seed(seed, "views");
  auto spec = cfg.views;
  spec.seed = derive_seed(views, std::uint64_t{1});
  out.view1 = augment::apply_light_view(out.raw, spec, nullptr, cfg.workers);
  spec.seed = derive_seed(views, std::uint64_t{2});
  out.view2 = augment::apply_light_view(out.raw, spec, nullptr, cfg.workers);
  out.opposite = losses::paired_opposites(b);
  out.labels = torch::cat({torch::zeros({b}, torch::kInt64), torch::ones({b}, torch::kInt64)});
  return out;
}

Optimizer::Optimizer(std::vector<torch::Tensor> params, const TrainConfig& cfg)
    : params_(std::move(params)),
      kind_(cfg.optimizer),
      momentum_(cfg.momentum),
      weight_decay_(cfg.weight_decay),
      eta_(cfg.lars_eta) {
  for (const auto& p : params_) buffers_.push_back(torch::zeros_like(p));
}

void Optimizer::zero_grad() {
  for (auto& p : params_) {
    if (p.grad().defined()) p.mutable_grad().zero_();
  }
}

void Optimizer::step(double lr) {
  torch::NoGradGuard guard;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.grad().defined()) continue;
    auto g = p.grad().clone();
    const bool adapt = kind_ == OptimizerKind::lars && p.dim() > 1;
    if (kind_ == OptimizerKind::sgd_momentum || adapt) g.add_(p, weight_decay_);
    if (adapt) {
      const double pn = p.norm().item<double>();
      const double gn = g.norm().item<double>();
      if (pn > 0.0 && gn > 0.0) g.mul_(eta_ * pn / gn);
    }
    buffers_[i].mul_(momentum_).add_(g);
    p.sub_(buffers_[i], lr);
  }
}

StepResult train_step(nets::CobraNet& model, Optimizer& opt, const PairImages& batch, const TrainConfig& cfg, double lr,
                      Seed attack_seed) {
  const auto m = batch.raw.size(0);
  model->train();
  attacks::TrainingAttackInputs in;
  {
    torch::NoGradGuard guard;
    in.z1 = model->embed(batch.view1);
    in.z2 = model->embed(batch.view2);
  }
  in.opposite = batch.opposite;
  in.labels = batch.labels;
  in.temperature = cfg.temperature;
  in.loss = cfg.loss;
  auto acfg = cfg.attack;
  acfg.seed = attack_seed;
  const auto x_adv = attacks::pgd_training_attack(model, batch.raw, in, acfg);

  opt.zero_grad();
  const auto out = model->forward(torch::cat({batch.raw, batch.view1, batch.view2, x_adv}, 0));
  const auto z = out.z.split(m, 0);
  const auto p = out.p_anom.split(m, 0);
  const losses::PairBatch pb{z[1], z[2], z[3], batch.opposite, batch.labels, cfg.temperature};
  const auto cobra = losses::cobra_loss(pb, cfg.loss);
  const auto cls_p = torch::cat({p[0], p[3]});
  const auto cls_y = torch::cat({batch.labels, batch.labels});
  const auto cls = losses::cls_loss(cls_p, cls_y);
  const auto loss = cfg.loss.cls_weight != 0.0 ? cobra + cfg.loss.cls_weight * cls : cobra;

  StepResult r;
  r.loss = loss.item<double>();
  if (!std::isfinite(r.loss)) throw NumericError("non-finite training loss");
  loss.backward();
  double sq = 0.0;
  for (const auto& param : model->parameters()) {
    if (param.grad().defined()) sq += param.grad().pow(2).sum().item<double>();
  }
  r.grad_norm = std::sqrt(sq);
  if (!std::isfinite(r.grad_norm)) throw NumericError("non-finite gradient norm");
  if (cfg.grad_clip > 0.0 && r.grad_norm > cfg.grad_clip) {
    torch::NoGradGuard guard;
    for (auto& param : model->parameters()) {
      if (param.grad().defined()) param.grad().mul_(cfg.grad_clip / r.grad_norm);
    }
  }
  opt.step(lr);

  torch::NoGradGuard guard;
  r.cobra = cobra.item<double>();
  r.cls = cls.item<double>();
  const losses::PairBatch detached{pb.z1.detach(), pb.z2.detach(), pb.z_adv.detach(), pb.opposite, pb.labels,
                                   pb.temperature};
  r.nt_xent = losses::nt_xent(detached, cfg.loss.reduction).item<double>();
  r.opposite_mass = losses::opposite_mass(detached).item<double>();
  r.cls_acc = (cls_p.detach() > 0.5).to(torch::kInt64).eq(cls_y).to(torch::kFloat64).mean().item<double>();
  r.adv_linf = (x_adv - batch.raw).abs().max().item<double>();
  return r;
}

nlohmann::json StepRecord::to_json() const {
  return {{"epoch", epoch},
          {"step", step},
          {"lr", lr},
          {"loss", result.loss},
          {"cobra", result.cobra},
          {"cls", result.cls},
          {"nt_xent", result.nt_xent},
          {"opposite_mass", result.opposite_mass},
          {"cls_acc", result.cls_acc},
          {"grad_norm", result.grad_norm},
          {"adv_linf", result.adv_linf},
          {"craft_accept_rate", craft_accept_rate}};
}

FitResult fit(const torch::Tensor& d_train, const crafter::ThresholdModel& tm,
              std::span<const augment::TransformSpec> bank, const FitOptions& opts) {
  const auto& cfg = opts.train;
  cfg.validate();
  check_image_batch(d_train, "fit");
  const nets::InputShape shape{d_train.size(1), d_train.size(2), d_train.size(3)};
  if (!(shape == opts.model.input)) throw ValidationError("fit: training images do not match model.input");

  FitResult res;
  res.model = nets::make_model(opts.model, derive_seed(cfg.seed, "init"));
  Optimizer opt(res.model->parameters(), cfg);
  const bool persist = !opts.run_dir.empty();
  if (persist) {
    std::filesystem::create_directories(opts.run_dir);
    res.checkpoint = opts.run_dir / "model.ckpt";
  }

  if (opts.resume) {
    if (!persist) throw ValidationError("fit: resume needs a run directory");
    const auto data = io::read_checkpoint(res.checkpoint, io::CheckpointKind::model);
    io::import_module(*res.model, "model/", data);
    auto& bufs = opt.buffers();
    for (std::size_t i = 0; i < bufs.size(); ++i) {
      const auto name = "optim/" + std::to_string(i);
      if (!data.has(name)) throw ValidationError("fit: checkpoint lacks optimizer state; cannot resume");
      bufs[i].copy_(data.tensor(name));
    }
    res.start_epoch = data.meta.value("epochs_done", 0);
    if (data.meta.contains("log")) {
      for (const auto& j : data.meta.at("log")) {
        StepRecord rec;
        rec.epoch = j.at("epoch");
        rec.step = j.at("step");
        rec.lr = j.at("lr");
        rec.result.loss = j.at("loss");
        rec.result.cobra = j.at("cobra");
        rec.result.cls = j.at("cls");
        rec.result.nt_xent = j.at("nt_xent");
        rec.result.opposite_mass = j.at("opposite_mass");
        rec.result.cls_acc = j.at("cls_acc");
        rec.result.grad_norm = j.at("grad_norm");
        rec.result.adv_linf = j.at("adv_linf");
        rec.craft_accept_rate = j.at("craft_accept_rate");
        res.log.push_back(rec);
      }
    }
  }

  std::ofstream log_file;
  if (persist) {
    log_file.open(opts.run_dir / "log.jsonl", std::ios::trunc);
    for (const auto& rec : res.log) log_file << rec.to_json().dump() << "\n";
    log_file.flush();
  }

  auto save = [&](int epochs_done) {
    if (!persist) return;
    nlohmann::json meta;
    meta["epochs_done"] = epochs_done;
    meta["train_config"] = cfg.to_json();
    nlohmann::json log = nlohmann::json::array();
    for (const auto& rec : res.log) log.push_back(rec.to_json());
    meta["log"] = std::move(log);
    write_training_checkpoint(res.model, opt, res.checkpoint, meta);
  };
  if (res.start_epoch == 0) save(0);

  const auto n = d_train.size(0);
  const auto steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  for (int epoch = res.start_epoch; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_order(n, cfg.seed, epoch);
    for (std::int64_t s = 0; s < steps_per_epoch; ++s) {
      const auto idx = order.slice(0, s * cfg.batch_size, std::min((s + 1) * cfg.batch_size, n));
      const Seed seed = step_seed(cfg.seed, epoch, s);
      const auto batch = make_pair_batch(d_train.index_select(0, idx), tm, bank, seed, cfg);
      StepRecord rec;
      rec.epoch = epoch;
      rec.step = epoch * steps_per_epoch + s;
      rec.lr = learning_rate(cfg, rec.step, steps_per_epoch);
      rec.craft_accept_rate = crafter::summarize(batch.craft_logs).accept_rate;
      try {
        rec.result = train_step(res.model, opt, batch, cfg, rec.lr, derive_seed(seed, "attack"));
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + " step " +
                           std::to_string(rec.step) +
                           (persist ? "; last good checkpoint: " + res.checkpoint.string() : std::string()));
      }
      if (rec.result.adv_linf > cfg.attack.epsilon + 1e-6) {
        throw Error("adversarial views exceeded the attack budget at step " + std::to_string(rec.step));
      }
      if (persist) {
        log_file << rec.to_json().dump() << "\n";
        log_file.flush();
      }
      if (cfg.verbose) {
        std::cerr << "[train] epoch " << epoch + 1 << "/" << cfg.epochs << " step " << s + 1 << "/" << steps_per_epoch
                  << " loss " << rec.result.loss << " cls_acc " << rec.result.cls_acc << " opp_mass "
                  << rec.result.opposite_mass << "\n";
      }
      res.log.push_back(rec);
    }
    save(epoch + 1);
  }
  res.model->eval();
  return res;
}

}  // namespace cobra::trainer
