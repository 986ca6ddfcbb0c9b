#pragma once

#include <filesystem>
#include <json.hpp>
#include <string_view>

#include "cobra/checkpoint.hpp"
#include "cobra/common.hpp"

namespace cobra::nets {

enum class EncoderKind { small_cnn, resnet18 };

std::string_view to_string(EncoderKind kind);
EncoderKind parse_encoder_kind(std::string_view name);

struct InputShape {
  std::int64_t channels = 1;
  std::int64_t height = 28;
  std::int64_t width = 28;
  bool operator==(const InputShape&) const = default;
};

struct ModelConfig {
  EncoderKind encoder = EncoderKind::small_cnn;
  std::int64_t proj_dim = 128;
  std::int64_t proj_layers = 2;
  InputShape input;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

/// Feature encoder F. small_cnn: four stride-2 conv blocks (32, 64, 128, 256
/// channels) with GroupNorm and global average pooling. resnet18: the usual
/// four-stage basic-block network with a 3x3 stem.
class EncoderImpl : public torch::nn::Module {
 public:
  EncoderImpl(EncoderKind kind, std::int64_t in_channels);
  torch::Tensor forward(const torch::Tensor& x);
  std::int64_t out_dim() const { return out_dim_; }

 private:
  torch::nn::Sequential body_{nullptr};
  std::int64_t out_dim_ = 0;
};
TORCH_MODULE(Encoder);

struct ForwardOutput {
  torch::Tensor h;       // encoder features
  torch::Tensor z;       // projected, unit L2 rows
  torch::Tensor logits;  // (N, 2); column 1 is the anomaly class
  torch::Tensor p_anom;  // softmax(logits)[:, 1]
};

/// f = G(F(.)) plus the binary head H on top of F.
class CobraNetImpl : public torch::nn::Module {
 public:
  explicit CobraNetImpl(ModelConfig config);

  ForwardOutput forward(const torch::Tensor& x);
  /// Projected embedding only.
  torch::Tensor embed(const torch::Tensor& x);

  const ModelConfig& config() const { return config_; }

 private:
  void check_input(const torch::Tensor& x) const;

  ModelConfig config_;
  Encoder encoder_{nullptr};
  torch::nn::Sequential projector_{nullptr};
  torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(CobraNet);

/// k-way transformation classifier C; its penultimate activation is the
/// embedding used for density thresholding.
class TransformClassifierImpl : public torch::nn::Module {
 public:
  TransformClassifierImpl(EncoderKind kind, InputShape input, std::int64_t classes);

  torch::Tensor logits(const torch::Tensor& x);
  torch::Tensor embed(const torch::Tensor& x);

  EncoderKind kind() const { return kind_; }
  const InputShape& input() const { return input_; }
  std::int64_t classes() const { return classes_; }
  std::int64_t embed_dim() const { return encoder_->out_dim(); }

 private:
  EncoderKind kind_;
  InputShape input_;
  std::int64_t classes_;
  Encoder encoder_{nullptr};
  torch::nn::Linear fc_{nullptr};
};
TORCH_MODULE(TransformClassifier);

/// Seeds libtorch's generator and builds a fresh model.
CobraNet make_model(const ModelConfig& config, Seed init_seed);

/// Hash over all parameters.
std::string model_fingerprint(const torch::nn::Module& module);

void save_checkpoint(CobraNet& model, const std::filesystem::path& path,
                     const nlohmann::json& extra_meta = nlohmann::json::object());

struct LoadedModel {
  CobraNet model{nullptr};
  nlohmann::json meta;
  io::CheckpointData raw;
};

LoadedModel load_checkpoint(const std::filesystem::path& path);

/// Process a large batch in fixed-size chunks and concatenate along dim 0.
template <typename Fn>
torch::Tensor chunked(const torch::Tensor& x, std::int64_t chunk, Fn&& fn) {
  std::vector<torch::Tensor> parts;
  for (std::int64_t i = 0; i < x.size(0); i += chunk) {
    parts.push_back(fn(x.slice(0, i, std::min(i + chunk, x.size(0)))));
  }
  return torch::cat(parts, 0);
}

}  // namespace cobra::nets
