#include "cobra/nets.hpp"

namespace cobra::nets {

namespace {

std::int64_t groups_for(std::int64_t channels) { return std::min<std::int64_t>(8, channels); }

class ConvBlockImpl : public torch::nn::Module {
 public:
  ConvBlockImpl(std::int64_t in, std::int64_t out, std::int64_t stride) {
    conv_ = register_module("conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1).bias(false)));
    gn_ = register_module("gn", torch::nn::GroupNorm(torch::nn::GroupNormOptions(groups_for(out), out)));
  }

  torch::Tensor forward(const torch::Tensor& x) { return torch::relu(gn_(conv_(x))); }

 private:
  torch::nn::Conv2d conv_{nullptr};
  torch::nn::GroupNorm gn_{nullptr};
};
TORCH_MODULE(ConvBlock);

class BasicBlockImpl : public torch::nn::Module {
 public:
  BasicBlockImpl(std::int64_t in, std::int64_t out, std::int64_t stride) {
    conv1_ = register_module("conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1).bias(false)));
    gn1_ = register_module("gn1", torch::nn::GroupNorm(torch::nn::GroupNormOptions(groups_for(out), out)));
    conv2_ = register_module("conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(out, out, 3).stride(1).padding(1).bias(false)));
    gn2_ = register_module("gn2", torch::nn::GroupNorm(torch::nn::GroupNormOptions(groups_for(out), out)));
    if (stride != 1 || in != out) {
      shortcut_ = register_module(
          "shortcut", torch::nn::Sequential(
                          torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1).stride(stride).bias(false)),
                          torch::nn::GroupNorm(torch::nn::GroupNormOptions(groups_for(out), out))));
    }
  }

  torch::Tensor forward(const torch::Tensor& x) {
    auto y = torch::relu(gn1_(conv1_(x)));
    y = gn2_(conv2_(y));
    return torch::relu(y + (shortcut_ ? shortcut_->forward(x) : x));
  }

 private:
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
  torch::nn::GroupNorm gn1_{nullptr}, gn2_{nullptr};
  torch::nn::Sequential shortcut_{nullptr};
};
TORCH_MODULE(BasicBlock);

}  // namespace

std::string_view to_string(EncoderKind kind) {
  return kind == EncoderKind::small_cnn ? "small_cnn" : "resnet18";
}

EncoderKind parse_encoder_kind(std::string_view name) {
  if (name == "small_cnn") return EncoderKind::small_cnn;
  if (name == "resnet18") return EncoderKind::resnet18;
  throw ValidationError("unknown encoder '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  if (proj_dim < 2) throw ValidationError("model.proj_dim must be >= 2");
  if (proj_layers < 1) throw ValidationError("model.proj_layers must be >= 1");
  if (input.channels < 1 || input.height < 4 || input.width < 4) {
    throw ValidationError("model input shape must be at least (1, 4, 4)");
  }
}

nlohmann::json ModelConfig::to_json() const {
  return {{"encoder", std::string(to_string(encoder))},
          {"proj_dim", proj_dim},
          {"proj_layers", proj_layers},
          {"input", {input.channels, input.height, input.width}}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.encoder = parse_encoder_kind(j.at("encoder").get<std::string>());
  c.proj_dim = j.at("proj_dim").get<std::int64_t>();
  c.proj_layers = j.at("proj_layers").get<std::int64_t>();
  const auto& in = j.at("input");
  c.input = {in.at(0).get<std::int64_t>(), in.at(1).get<std::int64_t>(), in.at(2).get<std::int64_t>()};
  c.validate();
  return c;
}

EncoderImpl::EncoderImpl(EncoderKind kind, std::int64_t in_channels) {
  torch::nn::Sequential body;
  if (kind == EncoderKind::small_cnn) {
    std::int64_t in = in_channels;
    for (std::int64_t out : {32, 64, 128, 256}) {
      body->push_back(ConvBlock(in, out, 2));
      in = out;
    }
    out_dim_ = 256;
  } else {
    body->push_back(ConvBlock(in_channels, 64, 1));
    std::int64_t in = 64;
    for (auto [out, stride] : std::vector<std::pair<std::int64_t, std::int64_t>>{{64, 1}, {128, 2}, {256, 2}, {512, 2}}) {
      body->push_back(BasicBlock(in, out, stride));
      body->push_back(BasicBlock(out, out, 1));
      in = out;
    }
    out_dim_ = 512;
  }
  body->push_back(torch::nn::AdaptiveAvgPool2d(torch::nn::AdaptiveAvgPool2dOptions(1)));
  body->push_back(torch::nn::Flatten());
  body_ = register_module("body", body);
}

torch::Tensor EncoderImpl::forward(const torch::Tensor& x) { return body_->forward(x); }

CobraNetImpl::CobraNetImpl(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  encoder_ = register_module("encoder", Encoder(config_.encoder, config_.input.channels));
  const auto feat = encoder_->out_dim();
  torch::nn::Sequential proj;
  for (std::int64_t i = 0; i + 1 < config_.proj_layers; ++i) {
    proj->push_back(torch::nn::Linear(feat, feat));
    proj->push_back(torch::nn::ReLU());
  }
  proj->push_back(torch::nn::Linear(feat, config_.proj_dim));
  projector_ = register_module("projector", proj);
  head_ = register_module("head", torch::nn::Linear(feat, 2));
}

void CobraNetImpl::check_input(const torch::Tensor& x) const {
  if (x.dim() != 4 || x.size(1) != config_.input.channels || x.size(2) != config_.input.height ||
      x.size(3) != config_.input.width) {
    throw ValidationError("model input shape mismatch: expected (N, " + std::to_string(config_.input.channels) + ", " +
                          std::to_string(config_.input.height) + ", " + std::to_string(config_.input.width) + ")");
  }
}

ForwardOutput CobraNetImpl::forward(const torch::Tensor& x) {
  check_input(x);
  ForwardOutput out;
  out.h = encoder_->forward(x);
  out.z = torch::nn::functional::normalize(projector_->forward(out.h),
                                           torch::nn::functional::NormalizeFuncOptions().dim(1).eps(1e-12));
  out.logits = head_->forward(out.h);
  out.p_anom = torch::softmax(out.logits, 1).select(1, 1);
  return out;
}

torch::Tensor CobraNetImpl::embed(const torch::Tensor& x) {
  check_input(x);
  return torch::nn::functional::normalize(projector_->forward(encoder_->forward(x)),
                                          torch::nn::functional::NormalizeFuncOptions().dim(1).eps(1e-12));
}

TransformClassifierImpl::TransformClassifierImpl(EncoderKind kind, InputShape input, std::int64_t classes)
    : kind_(kind), input_(input), classes_(classes) {
  if (classes < 2) throw ValidationError("transform classifier needs at least 2 classes");
  encoder_ = register_module("encoder", Encoder(kind, input.channels));
  fc_ = register_module("fc", torch::nn::Linear(encoder_->out_dim(), classes));
}

torch::Tensor TransformClassifierImpl::logits(const torch::Tensor& x) { return fc_->forward(encoder_->forward(x)); }

torch::Tensor TransformClassifierImpl::embed(const torch::Tensor& x) { return encoder_->forward(x); }

CobraNet make_model(const ModelConfig& config, Seed init_seed) {
  torch::manual_seed(init_seed & 0x7fffffffffffffffULL);
  return CobraNet(config);
}

std::string model_fingerprint(const torch::nn::Module& module) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : module.named_parameters(true)) {
    const auto t = p.value().detach().cpu().contiguous();
    h = fnv1a(p.key().data(), p.key().size(), h);
    h = fnv1a(t.data_ptr(), static_cast<std::size_t>(t.numel()) * t.element_size(), h);
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void save_checkpoint(CobraNet& model, const std::filesystem::path& path, const nlohmann::json& extra_meta) {
  io::CheckpointData data;
  data.kind = io::CheckpointKind::model;
  data.meta = extra_meta.is_object() ? extra_meta : nlohmann::json::object();
  data.meta["model_config"] = model->config().to_json();
  io::export_module(*model, "model/", data);
  io::write_checkpoint(path, data);
}

LoadedModel load_checkpoint(const std::filesystem::path& path) {
  LoadedModel out;
  out.raw = io::read_checkpoint(path, io::CheckpointKind::model);
  out.meta = out.raw.meta;
  out.model = CobraNet(ModelConfig::from_json(out.meta.at("model_config")));
  io::import_module(*out.model, "model/", out.raw);
  return out;
}

}  // namespace cobra::nets
