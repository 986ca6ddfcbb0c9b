#pragma once

// Light (semantics-preserving) view transforms and hard (semantics-destroying)
// transforms used to craft pseudo-anomalies. Everything here is a pure function
// of (input, spec, seed); no global RNG state is touched.

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cobra/common.hpp"

namespace cobra::augment {

enum class TransformId {
  jigsaw,
  random_erasing,
  cutpaste,
  rotation,
  extreme_blur,
  intense_crop,
  noise_injection,
  extreme_crop,
  mixup,
  cutout,
  cutmix,
  elastic,
};

inline constexpr std::array<TransformId, 12> kAllTransforms = {
    TransformId::jigsaw,       TransformId::random_erasing,  TransformId::cutpaste,
    TransformId::rotation,     TransformId::extreme_blur,    TransformId::intense_crop,
    TransformId::noise_injection, TransformId::extreme_crop, TransformId::mixup,
    TransformId::cutout,       TransformId::cutmix,          TransformId::elastic,
};

std::string_view to_string(TransformId id);
TransformId parse_transform_id(std::string_view name);

/// A hard transform plus its numeric parameters. Ranged parameters come in
/// min_*/max_* pairs; collapsing a pair pins the value (e.g. rotation by exactly 0).
struct TransformSpec {
  TransformId id = TransformId::rotation;
  std::map<std::string, double> params;

  static TransformSpec defaults(TransformId id);
  double param(const std::string& key) const;
  TransformSpec with(const std::string& key, double value) const;
  bool needs_donor() const { return id == TransformId::mixup || id == TransformId::cutmix; }
};

/// Throws ValidationError for unknown parameter names or values outside the
/// permitted range of the transform.
void validate(const TransformSpec& spec);

/// All twelve transforms with their default parameters.
std::vector<TransformSpec> default_bank();

struct Region {
  std::int64_t top = 0;
  std::int64_t left = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::int64_t area() const { return height * width; }
};

/// What one transform did to one image; enough to replay or audit it.
struct TransformRecord {
  TransformId id = TransformId::rotation;
  std::optional<Region> region;  // pasted/erased/filled box, or source box for crops
  std::optional<Region> source;  // cutpaste: where the patch was cut from
  std::optional<std::int64_t> donor;
  std::optional<double> mix_weight;  // mixup: weight on the transformed image
  std::optional<double> angle_deg;
  std::vector<int> permutation;  // jigsaw: output tile k holds input tile permutation[k]
};
using SampleLog = std::vector<TransformRecord>;

/// Applies `seq` in order to a single (C, H, W) image. `donors` is an
/// (M, C, H, W) pool for mixup/cutmix; the donor index is drawn from `seed`.
torch::Tensor apply_hard_sequence_to(const torch::Tensor& image, std::span<const TransformSpec> seq,
                                     Seed seed, const torch::Tensor& donors, SampleLog* log = nullptr);

/// Batch form: image n uses the sub-seed derive_seed(seed, n) and draws donors
/// from the batch itself.
torch::Tensor apply_hard_sequence(const torch::Tensor& x, std::span<const TransformSpec> seq, Seed seed,
                                  std::vector<SampleLog>* logs = nullptr, int workers = 1);

/// Random subset of the bank in random order, 2 <= m < |bank| (m = 2 when the
/// bank has exactly two entries).
std::vector<TransformSpec> sample_hard_sequence(Seed seed, std::span<const TransformSpec> bank);

enum class LightOp { color_jitter, random_grayscale, random_crop };

std::string_view to_string(LightOp op);
LightOp parse_light_op(std::string_view name);

struct LightViewSpec {
  std::vector<LightOp> ops = {LightOp::color_jitter, LightOp::random_grayscale, LightOp::random_crop};
  Seed seed = 0;
  // Jitter strengths: factors are drawn from [1 - s, 1 + s].
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.4;
  double jitter_prob = 0.8;
  double grayscale_prob = 0.2;
  double crop_min_area = 0.8;
  double crop_max_area = 1.0;
};

struct LightRecord {
  LightOp op = LightOp::color_jitter;
  bool applied = false;
  std::optional<Region> crop;
};
using LightLog = std::vector<LightRecord>;

/// Positive view of every image in the batch; image n uses derive_seed(spec.seed, n).
torch::Tensor apply_light_view(const torch::Tensor& x, const LightViewSpec& spec,
                               std::vector<LightLog>* logs = nullptr, int workers = 1);

}  // namespace cobra::augment
