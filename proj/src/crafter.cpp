#include "cobra/crafter.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

namespace cobra::crafter {

namespace {

constexpr std::int64_t kEvalChunk = 512;

torch::Tensor permutation(std::int64_t n, Seed seed) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = make_rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  return torch::tensor(idx, torch::kInt64);
}

std::vector<TransformSpec> fallback_sequence(std::span<const TransformSpec> bank, Seed seed) {
  std::vector<TransformSpec> seq(bank.begin(), bank.end());
  Rng rng = make_rng(derive_seed(seed, "fallback"));
  std::shuffle(seq.begin(), seq.end(), rng);
  return seq;
}

std::vector<augment::TransformId> ids_of(std::span<const TransformSpec> seq) {
  std::vector<augment::TransformId> ids;
  for (const auto& t : seq) ids.push_back(t.id);
  return ids;
}

CraftResult craft_impl(const torch::Tensor& batch, const torch::Tensor& donors, const ThresholdModel& tm,
                       std::span<const TransformSpec> bank, Seed seed, const CraftOptions& opts) {
  if (opts.max_iters < 1) throw ValidationError("craft: max_iters must be >= 1");
  if (bank.size() < 2) throw ValidationError("craft: bank needs at least 2 transforms");
  const auto n = batch.size(0);
  const auto src = batch.detach().contiguous();
  std::vector<torch::Tensor> out(static_cast<std::size_t>(n));
  std::vector<CraftLog> logs(static_cast<std::size_t>(n));
  std::vector<std::int64_t> pending(static_cast<std::size_t>(n));
  std::iota(pending.begin(), pending.end(), 0);

  for (int attempt = 0; attempt < opts.max_iters && !pending.empty(); ++attempt) {
    std::vector<torch::Tensor> candidates(pending.size());
    std::vector<std::vector<TransformSpec>> seqs(pending.size());
    parallel_for(static_cast<std::int64_t>(pending.size()), opts.workers, [&](std::int64_t j) {
      const auto i = pending[static_cast<std::size_t>(j)];
      const Seed s = derive_seed(derive_seed(seed, static_cast<std::uint64_t>(i)), static_cast<std::uint64_t>(attempt));
      auto& seq = seqs[static_cast<std::size_t>(j)];
      seq = augment::sample_hard_sequence(derive_seed(s, "sequence"), bank);
      candidates[static_cast<std::size_t>(j)] =
          augment::apply_hard_sequence_to(src[i], seq, derive_seed(s, "apply"), donors);
    });
    const auto p = tm.pvalues(torch::stack(candidates));
    std::vector<std::int64_t> still;
    for (std::size_t j = 0; j < pending.size(); ++j) {
      const auto i = static_cast<std::size_t>(pending[j]);
      auto& log = logs[i];
      log.attempts = attempt + 1;
      log.final_pvalue = p[j];
      log.sequence_used = ids_of(seqs[j]);
      if (tm.is_anomalous(p[j])) {
        out[i] = candidates[j];
      } else {
        still.push_back(pending[j]);
      }
    }
    pending = std::move(still);
  }

  if (!pending.empty()) {
    std::vector<torch::Tensor> fallbacks(pending.size());
    std::vector<std::vector<TransformSpec>> seqs(pending.size());
    parallel_for(static_cast<std::int64_t>(pending.size()), opts.workers, [&](std::int64_t j) {
      const auto i = pending[static_cast<std::size_t>(j)];
      const Seed s = derive_seed(seed, static_cast<std::uint64_t>(i));
      seqs[static_cast<std::size_t>(j)] = fallback_sequence(bank, s);
      fallbacks[static_cast<std::size_t>(j)] =
          augment::apply_hard_sequence_to(src[i], seqs[static_cast<std::size_t>(j)], derive_seed(s, "fallback_apply"), donors);
    });
    const auto p = tm.pvalues(torch::stack(fallbacks));
    for (std::size_t j = 0; j < pending.size(); ++j) {
      auto& log = logs[static_cast<std::size_t>(pending[j])];
      log.fallback_used = true;
      log.attempts = opts.max_iters;
      log.final_pvalue = p[j];
      log.sequence_used = ids_of(seqs[j]);
      out[static_cast<std::size_t>(pending[j])] = fallbacks[j];
    }
  }
  return {torch::stack(out), std::move(logs)};
}

}  // namespace

TransformDataset build_transform_dataset(const torch::Tensor& d_train, std::span<const TransformSpec> bank, Seed seed,
                                         int workers) {
  check_image_batch(d_train, "build_transform_dataset");
  if (bank.size() < 2) throw ValidationError("build_transform_dataset: bank needs at least 2 transforms");
  const auto n = d_train.size(0);
  const auto k = static_cast<std::int64_t>(bank.size());
  const auto src = d_train.detach().contiguous();
  std::vector<torch::Tensor> images(static_cast<std::size_t>(n * k));
  parallel_for(n * k, workers, [&](std::int64_t idx) {
    const auto cls = idx / n;
    const auto i = idx % n;
    const TransformSpec& t = bank[static_cast<std::size_t>(cls)];
    images[static_cast<std::size_t>(idx)] = augment::apply_hard_sequence_to(
        src[i], std::span<const TransformSpec>(&t, 1), derive_seed(seed, static_cast<std::uint64_t>(idx)), src);
  });
  auto labels = torch::arange(k, torch::kInt64).repeat_interleave(n);
  return {torch::stack(images), labels};
}

nets::TransformClassifier train_transform_classifier(const TransformDataset& data, const ClassifierOptions& opts,
                                                     ClassifierReport* report) {
  check_image_batch(data.images, "train_transform_classifier");
  if (opts.epochs < 1) throw ValidationError("train_transform_classifier: epochs must be >= 1");
  if (data.labels.size(0) != data.images.size(0)) throw ValidationError("train_transform_classifier: label count mismatch");
  const auto k = data.labels.max().item<std::int64_t>() + 1;
  if (data.labels.min().item<std::int64_t>() < 0 || k < 2) {
    throw ValidationError("train_transform_classifier: labels must cover [0, k) with k >= 2");
  }
  const nets::InputShape shape{data.images.size(1), data.images.size(2), data.images.size(3)};
  torch::manual_seed(derive_seed(opts.seed, "init") & 0x7fffffffffffffffULL);
  nets::TransformClassifier model(opts.encoder, shape, k);
  model->train();

  torch::optim::SGD optimizer(model->parameters(),
                              torch::optim::SGDOptions(opts.lr).momentum(opts.momentum).weight_decay(opts.weight_decay));
  const auto n = data.images.size(0);
  const auto steps_per_epoch = (n + opts.batch_size - 1) / opts.batch_size;
  const auto total_steps = steps_per_epoch * opts.epochs;
  std::int64_t step = 0;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    const auto order = permutation(n, derive_seed(opts.seed, static_cast<std::uint64_t>(epoch)));
    double loss_sum = 0.0;
    std::int64_t correct = 0;
    for (std::int64_t b = 0; b < n; b += opts.batch_size) {
      const double lr = 0.5 * opts.lr * (1.0 + std::cos(M_PI * static_cast<double>(step) / static_cast<double>(total_steps)));
      for (auto& group : optimizer.param_groups()) static_cast<torch::optim::SGDOptions&>(group.options()).lr(lr);
      const auto idx = order.slice(0, b, std::min(b + opts.batch_size, n));
      const auto x = data.images.index_select(0, idx);
      const auto y = data.labels.index_select(0, idx);
      optimizer.zero_grad();
      const auto logits = model->logits(x);
      const auto loss = torch::nn::functional::cross_entropy(logits, y);
      const double lv = loss.item<double>();
      if (!std::isfinite(lv)) {
        throw NumericError("transform classifier diverged at epoch " + std::to_string(epoch) + " (loss " +
                           std::to_string(lv) + "); lower crafter.classifier_lr");
      }
      loss.backward();
      optimizer.step();
      loss_sum += lv * static_cast<double>(idx.size(0));
      correct += logits.argmax(1).eq(y).sum().item<std::int64_t>();
      ++step;
    }
    const double acc = static_cast<double>(correct) / static_cast<double>(n);
    if (report) {
      report->epoch_loss.push_back(loss_sum / static_cast<double>(n));
      report->epoch_accuracy.push_back(acc);
    }
    if (opts.verbose) {
      std::cerr << "[classifier] epoch " << epoch + 1 << "/" << opts.epochs << " loss " << loss_sum / static_cast<double>(n)
                << " acc " << acc << "\n";
    }
  }
  model->eval();
  return model;
}

double classifier_accuracy(nets::TransformClassifier& classifier, const TransformDataset& data) {
  torch::NoGradGuard guard;
  const auto pred = nets::chunked(data.images, kEvalChunk, [&](const torch::Tensor& x) { return classifier->logits(x).argmax(1); });
  return pred.eq(data.labels).to(torch::kFloat64).mean().item<double>();
}

ThresholdModel::ThresholdModel(nets::TransformClassifier classifier, GaussianMixture gmm, std::vector<double> train_loglik,
                               double lambda)
    : classifier_(std::move(classifier)), gmm_(std::move(gmm)), train_loglik_(std::move(train_loglik)), lambda_(lambda) {
  if (!(lambda_ > 0.0) || lambda_ > 1.0) throw ValidationError("significance level must lie in (0, 1]");
  if (train_loglik_.empty()) throw ValidationError("threshold model needs training likelihoods");
  std::sort(train_loglik_.begin(), train_loglik_.end());
  classifier_->eval();
}

torch::Tensor ThresholdModel::embed(const torch::Tensor& x) const {
  check_image_batch(x, "threshold model input");
  torch::NoGradGuard guard;
  auto c = classifier_;
  const auto e = nets::chunked(x.to(torch::kFloat32), kEvalChunk, [&](const torch::Tensor& b) { return c->embed(b); });
  return e.to(torch::kFloat64);
}

std::vector<double> ThresholdModel::log_likelihood(const torch::Tensor& x) const {
  const auto e = embed(x);
  if (!torch::isfinite(e).all().item<bool>()) throw ValidationError("threshold model: non-finite embedding");
  return gmm_.log_likelihood(Matrix::from_tensor(e));
}

double ThresholdModel::pvalue_from_loglik(double ll) const {
  if (!std::isfinite(ll) && !(ll < 0)) throw ValidationError("pvalue: non-finite log-likelihood");
  const auto count = std::upper_bound(train_loglik_.begin(), train_loglik_.end(), ll) - train_loglik_.begin();
  return static_cast<double>(1 + count) / static_cast<double>(train_loglik_.size() + 1);
}

std::vector<double> ThresholdModel::pvalues(const torch::Tensor& x) const {
  const auto ll = log_likelihood(x);
  std::vector<double> p(ll.size());
  std::transform(ll.begin(), ll.end(), p.begin(), [&](double v) { return pvalue_from_loglik(v); });
  return p;
}

double ThresholdModel::pvalue(const torch::Tensor& image) const {
  return pvalues(image.dim() == 3 ? image.unsqueeze(0) : image).at(0);
}

ThresholdModel ThresholdModel::with_lambda(double lambda) const {
  return ThresholdModel(classifier_, gmm_, train_loglik_, lambda);
}

void ThresholdModel::save(const std::filesystem::path& path, const nlohmann::json& extra_meta) const {
  io::CheckpointData data;
  data.kind = io::CheckpointKind::threshold;
  data.meta = extra_meta.is_object() ? extra_meta : nlohmann::json::object();
  data.meta["lambda"] = lambda_;
  data.meta["classifier"] = {{"encoder", std::string(nets::to_string(classifier_->kind()))},
                             {"input", {classifier_->input().channels, classifier_->input().height, classifier_->input().width}},
                             {"classes", classifier_->classes()}};
  io::export_module(*classifier_, "classifier/", data);
  data.add("gmm/weights", torch::tensor(gmm_.weights(), torch::kFloat64));
  data.add("gmm/means", gmm_.means().to_tensor());
  data.add("gmm/variances", gmm_.variances().to_tensor());
  data.add("train_loglik", torch::tensor(train_loglik_, torch::kFloat64));
  io::write_checkpoint(path, data);
}

ThresholdModel ThresholdModel::load(const std::filesystem::path& path) {
  const auto data = io::read_checkpoint(path, io::CheckpointKind::threshold);
  const auto& c = data.meta.at("classifier");
  const nets::InputShape shape{c.at("input").at(0).get<std::int64_t>(), c.at("input").at(1).get<std::int64_t>(),
                               c.at("input").at(2).get<std::int64_t>()};
  nets::TransformClassifier classifier(nets::parse_encoder_kind(c.at("encoder").get<std::string>()), shape,
                                       c.at("classes").get<std::int64_t>());
  io::import_module(*classifier, "classifier/", data);
  const auto w = data.tensor("gmm/weights").contiguous();
  std::vector<double> weights(w.data_ptr<double>(), w.data_ptr<double>() + w.numel());
  const auto ll = data.tensor("train_loglik").contiguous();
  std::vector<double> table(ll.data_ptr<double>(), ll.data_ptr<double>() + ll.numel());
  GaussianMixture gmm(std::move(weights), Matrix::from_tensor(data.tensor("gmm/means")),
                      Matrix::from_tensor(data.tensor("gmm/variances")));
  return ThresholdModel(classifier, std::move(gmm), std::move(table), data.meta.at("lambda").get<double>());
}

ThresholdModel fit_threshold_model(nets::TransformClassifier classifier, const torch::Tensor& d_train, double lambda,
                                   const GmmOptions& gmm_opts) {
  if (!(lambda > 0.0 && lambda <= 1.0)) throw ValidationError("fit_threshold_model: lambda must lie in (0, 1]");
  check_image_batch(d_train, "fit_threshold_model");
  if (d_train.size(0) < gmm_opts.components) {
    throw ValidationError("fit_threshold_model: " + std::to_string(d_train.size(0)) +
                          " training samples is fewer than the " + std::to_string(gmm_opts.components) +
                          " GMM components");
  }
  classifier->eval();
  torch::Tensor e;
  {
    torch::NoGradGuard guard;
    e = nets::chunked(d_train.to(torch::kFloat32), kEvalChunk, [&](const torch::Tensor& b) { return classifier->embed(b); })
            .to(torch::kFloat64);
  }
  const auto m = Matrix::from_tensor(e);
  auto gmm = GaussianMixture::fit(m, gmm_opts);
  auto table = gmm.log_likelihood(m);
  return ThresholdModel(std::move(classifier), std::move(gmm), std::move(table), lambda);
}

ThresholdModel fit_crafter(const torch::Tensor& d_train, const CrafterConfig& cfg, Seed seed, int workers,
                           ClassifierReport* report) {
  for (const auto& t : cfg.bank) augment::validate(t);
  const auto data = build_transform_dataset(d_train, cfg.bank, derive_seed(seed, "transform_dataset"), workers);
  auto copts = cfg.classifier;
  copts.seed = derive_seed(seed, "classifier");
  auto classifier = train_transform_classifier(data, copts, report);
  auto gopts = cfg.gmm;
  gopts.seed = derive_seed(seed, "gmm");
  return fit_threshold_model(classifier, d_train, cfg.lambda, gopts);
}

nlohmann::json CraftLog::to_json() const {
  std::vector<std::string> seq;
  for (auto id : sequence_used) seq.emplace_back(augment::to_string(id));
  return {{"attempts", attempts}, {"final_pvalue", final_pvalue}, {"sequence_used", seq}, {"fallback_used", fallback_used}};
}

std::pair<torch::Tensor, CraftLog> craft_pseudo_anomaly(const torch::Tensor& x, const ThresholdModel& tm,
                                                        std::span<const TransformSpec> bank, Seed seed, int max_iters,
                                                        const torch::Tensor& donors) {
  if (x.dim() != 3) throw ValidationError("craft_pseudo_anomaly: expected a (C, H, W) image");
  const auto batch = x.unsqueeze(0);
  check_image_batch(batch, "craft_pseudo_anomaly");
  auto result = craft_impl(batch, donors.defined() ? donors : batch, tm, bank, seed, {max_iters, 1});
  return {result.images[0], result.logs[0]};
}

CraftResult craft_batch(const torch::Tensor& b_normal, const ThresholdModel& tm, std::span<const TransformSpec> bank,
                        Seed seed, const CraftOptions& opts) {
  check_image_batch(b_normal, "craft_batch");
  return craft_impl(b_normal, b_normal, tm, bank, seed, opts);
}

nlohmann::json CraftSummary::to_json() const {
  return {{"count", count}, {"accept_rate", accept_rate}, {"mean_attempts", mean_attempts}};
}

CraftSummary summarize(std::span<const CraftLog> logs) {
  CraftSummary s;
  s.count = static_cast<std::int64_t>(logs.size());
  if (logs.empty()) return s;
  double accepted = 0.0, attempts = 0.0;
  for (const auto& l : logs) {
    accepted += l.fallback_used ? 0.0 : 1.0;
    attempts += l.attempts;
  }
  s.accept_rate = accepted / static_cast<double>(logs.size());
  s.mean_attempts = attempts / static_cast<double>(logs.size());
  return s;
}

}  // namespace cobra::crafter
