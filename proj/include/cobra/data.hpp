#pragma once

#include <filesystem>
#include <json.hpp>
#include <string>
#include <vector>

#include "cobra/common.hpp"

namespace cobra::data {

struct LabeledImages {
  torch::Tensor images;  // (N, C, H, W) float32 in [0, 1]
  std::vector<int> labels;
};

enum class ProtocolKind { one_class, multi_class };

std::string_view to_string(ProtocolKind k);
ProtocolKind parse_protocol_kind(std::string_view name);

/// Known datasets: mnist, fashion_mnist, cifar10 (files under root/<name>/),
/// shapes and noise (generated).
bool is_known_dataset(std::string_view name);
int num_classes(std::string_view name);

struct ProtocolSpec {
  ProtocolKind kind = ProtocolKind::one_class;
  std::string dataset = "mnist";  // one_class
  int class_id = 0;
  std::string in_dataset = "shapes";  // multi_class
  std::string out_dataset = "noise";
  int resolution = 28;
  int channels = 1;
  std::filesystem::path root;
  Seed split_seed = 0;
  std::int64_t max_train = 0;  // 0 keeps everything
  std::int64_t max_test = 0;
  std::int64_t synthetic_train = 2000;  // sizes for generated datasets
  std::int64_t synthetic_test = 1000;

  void validate() const;
  nlohmann::json to_json() const;
};

struct ProtocolData {
  torch::Tensor train;  // normal images only
  torch::Tensor held_out;  // training-split normals dropped by max_train; may be empty
  torch::Tensor test;
  std::vector<int> test_labels;  // 1 = anomaly
};

/// Dataset root from $COBRA_DATA_ROOT, else ./data.
std::filesystem::path default_data_root();

/// Big-endian IDX image/label pair (uint8 pixels scaled to [0, 1]).
LabeledImages load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// CIFAR-10 binary batches (1 label byte + 3072 pixel bytes per record).
LabeledImages load_cifar10_batches(const std::vector<std::filesystem::path>& files);

/// Loads the named dataset's train or test split.
LabeledImages load_dataset(const std::string& name, const std::filesystem::path& root, bool train, const ProtocolSpec& spec);

/// Filled circles (label 0) and filled squares (label 1) with jittered centre,
/// size and intensity on a faintly noisy background. Alternating labels.
LabeledImages make_synthetic_shapes(std::int64_t n, int resolution, Seed seed);

/// Uniform noise images, all labelled 0.
LabeledImages make_noise_images(std::int64_t n, int resolution, int channels, Seed seed);

/// Bilinear resize to (resolution, resolution) and channel replication/averaging.
torch::Tensor conform(const torch::Tensor& images, int resolution, int channels);

ProtocolData load_protocol(const ProtocolSpec& spec);

}  // namespace cobra::data
