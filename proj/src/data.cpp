#include "cobra/data.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>

namespace cobra::data {

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

std::string missing_message(const std::string& name, const std::filesystem::path& dir,
                            const std::vector<std::string>& files) {
  std::string msg = "dataset '" + name + "' not found under " + dir.string() + "; expected files:";
  for (const auto& f : files) msg += " " + f;
  msg += ". Download the raw (uncompressed) files into that directory or point data.root / $COBRA_DATA_ROOT at "
         "a directory containing '" + name + "/'.";
  return msg;
}

std::vector<std::int64_t> sample_indices(std::int64_t n, std::int64_t k, Seed seed) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  if (k <= 0 || k >= n) return idx;
  Rng rng = make_rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(static_cast<std::size_t>(k));
  std::sort(idx.begin(), idx.end());
  return idx;
}

torch::Tensor take(const torch::Tensor& x, const std::vector<std::int64_t>& idx) {
  return x.index_select(0, torch::tensor(idx, torch::kInt64));
}

}  // namespace

std::string_view to_string(ProtocolKind k) { return k == ProtocolKind::one_class ? "one_class" : "multi_class"; }

ProtocolKind parse_protocol_kind(std::string_view name) {
  if (name == "one_class") return ProtocolKind::one_class;
  if (name == "multi_class") return ProtocolKind::multi_class;
  throw ValidationError("unknown protocol '" + std::string(name) + "' (one_class, multi_class)");
}

bool is_known_dataset(std::string_view name) {
  return name == "mnist" || name == "fashion_mnist" || name == "cifar10" || name == "shapes" || name == "noise";
}

int num_classes(std::string_view name) {
  if (name == "shapes") return 2;
  if (name == "noise") return 1;
  if (is_known_dataset(name)) return 10;
  throw ValidationError("unknown dataset '" + std::string(name) + "'");
}

void ProtocolSpec::validate() const {
  if (resolution != 28 && resolution != 32 && resolution != 64) {
    throw ValidationError("data.resolution must be 28, 32 or 64");
  }
  if (channels != 1 && channels != 3) throw ValidationError("data.channels must be 1 or 3");
  if (max_train < 0 || max_test < 0) throw ValidationError("data.max_train and data.max_test must be >= 0");
  if (synthetic_train < 2 || synthetic_test < 2) throw ValidationError("synthetic dataset sizes must be >= 2");
  if (kind == ProtocolKind::one_class) {
    if (!is_known_dataset(dataset) || dataset == "noise") {
      throw ValidationError("data.dataset '" + dataset + "' cannot serve a one_class protocol");
    }
    if (class_id < 0 || class_id >= num_classes(dataset)) {
      throw ValidationError("data.class_id " + std::to_string(class_id) + " is invalid for " + dataset + " (0.." +
                            std::to_string(num_classes(dataset) - 1) + ")");
    }
  } else {
    if (!is_known_dataset(in_dataset) || !is_known_dataset(out_dataset)) {
      throw ValidationError("data.in_dataset / data.out_dataset must name known datasets");
    }
    if (in_dataset == out_dataset) throw ValidationError("data.in_dataset and data.out_dataset must differ");
  }
}

nlohmann::json ProtocolSpec::to_json() const {
  nlohmann::json j{{"kind", std::string(to_string(kind))}, {"resolution", resolution}, {"channels", channels}};
  if (kind == ProtocolKind::one_class) {
    j["dataset"] = dataset;
    j["class_id"] = class_id;
  } else {
    j["in_dataset"] = in_dataset;
    j["out_dataset"] = out_dataset;
  }
  j["max_train"] = max_train;
  j["max_test"] = max_test;
  j["split_seed"] = split_seed;
  return j;
}

std::filesystem::path default_data_root() {
  if (const char* env = std::getenv("COBRA_DATA_ROOT"); env && *env) return env;
  return "data";
}

LabeledImages load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto ib = read_file(images);
  const auto lb = read_file(labels);
  if (ib.size() < 16 || be32(ib, 0) != 0x00000803) throw CorruptFileError("not an IDX image file: " + images.string());
  if (lb.size() < 8 || be32(lb, 0) != 0x00000801) throw CorruptFileError("not an IDX label file: " + labels.string());
  const std::int64_t n = be32(ib, 4), h = be32(ib, 8), w = be32(ib, 12);
  if (static_cast<std::int64_t>(be32(lb, 4)) != n) throw CorruptFileError("IDX image/label counts differ");
  if (static_cast<std::int64_t>(ib.size()) < 16 + n * h * w || static_cast<std::int64_t>(lb.size()) < 8 + n) {
    throw CorruptFileError("truncated IDX file");
  }
  LabeledImages out;
  out.images = torch::from_blob(const_cast<unsigned char*>(ib.data() + 16), {n, 1, h, w}, torch::kUInt8)
                   .to(torch::kFloat32)
                   .div_(255.0);
  out.labels.assign(lb.begin() + 8, lb.begin() + 8 + n);
  return out;
}

LabeledImages load_cifar10_batches(const std::vector<std::filesystem::path>& files) {
  constexpr std::int64_t kRecord = 1 + 3 * 32 * 32;
  std::vector<torch::Tensor> parts;
  LabeledImages out;
  for (const auto& f : files) {
    const auto b = read_file(f);
    if (b.size() % kRecord != 0) throw CorruptFileError("truncated CIFAR-10 batch: " + f.string());
    const auto n = static_cast<std::int64_t>(b.size()) / kRecord;
    auto imgs = torch::empty({n, 3, 32, 32}, torch::kUInt8);
    auto* dst = imgs.data_ptr<std::uint8_t>();
    for (std::int64_t i = 0; i < n; ++i) {
      out.labels.push_back(b[static_cast<std::size_t>(i * kRecord)]);
      std::copy_n(b.data() + i * kRecord + 1, kRecord - 1, dst + i * (kRecord - 1));
    }
    parts.push_back(imgs.to(torch::kFloat32).div_(255.0));
  }
  out.images = torch::cat(parts, 0);
  return out;
}

LabeledImages load_dataset(const std::string& name, const std::filesystem::path& root, bool train,
                           const ProtocolSpec& spec) {
  if (name == "shapes") {
    return make_synthetic_shapes(train ? spec.synthetic_train : spec.synthetic_test, spec.resolution,
                                 derive_seed(spec.split_seed, train ? "shapes_train" : "shapes_test"));
  }
  if (name == "noise") {
    return make_noise_images(train ? spec.synthetic_train : spec.synthetic_test, spec.resolution, spec.channels,
                             derive_seed(spec.split_seed, train ? "noise_train" : "noise_test"));
  }
  const auto dir = root / name;
  if (name == "mnist" || name == "fashion_mnist") {
    const std::string prefix = train ? "train" : "t10k";
    const std::vector<std::string> files{prefix + "-images-idx3-ubyte", prefix + "-labels-idx1-ubyte"};
    for (const auto& f : files) {
      if (!std::filesystem::exists(dir / f)) throw NotFoundError(missing_message(name, dir, files));
    }
    return load_idx(dir / files[0], dir / files[1]);
  }
  if (name == "cifar10") {
    std::vector<std::string> names;
    if (train) {
      for (int i = 1; i <= 5; ++i) names.push_back("data_batch_" + std::to_string(i) + ".bin");
    } else {
      names.push_back("test_batch.bin");
    }
    std::vector<std::filesystem::path> files;
    for (const auto& f : names) {
      if (!std::filesystem::exists(dir / f)) throw NotFoundError(missing_message(name, dir, names));
      files.push_back(dir / f);
    }
    return load_cifar10_batches(files);
  }
  throw ValidationError("unknown dataset '" + name + "'");
}

LabeledImages make_synthetic_shapes(std::int64_t n, int resolution, Seed seed) {
  if (n < 2) throw ValidationError("make_synthetic_shapes: n must be >= 2");
  if (resolution < 8) throw ValidationError("make_synthetic_shapes: resolution must be >= 8");
  const auto r = static_cast<std::int64_t>(resolution);
  LabeledImages out;
  out.images = torch::zeros({n, 1, r, r}, torch::kFloat32);
  auto acc = out.images.accessor<float, 4>();
  Rng rng = make_rng(seed);
  std::normal_distribution<double> bg(0.0, 0.03);
  for (std::int64_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    out.labels.push_back(label);
    const double size = uniform(rng, 0.22, 0.34) * resolution;  // radius or half side
    const double cx = uniform(rng, size, resolution - size);
    const double cy = uniform(rng, size, resolution - size);
    const double level = uniform(rng, 0.6, 1.0);
    for (std::int64_t y = 0; y < r; ++y) {
      for (std::int64_t x = 0; x < r; ++x) {
        const double dx = static_cast<double>(x) + 0.5 - cx;
        const double dy = static_cast<double>(y) + 0.5 - cy;
        const bool inside = label == 0 ? dx * dx + dy * dy <= size * size
                                       : std::fabs(dx) <= size * 0.886 && std::fabs(dy) <= size * 0.886;
        const double v = (inside ? level : 0.0) + bg(rng);
        acc[i][0][y][x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return out;
}

LabeledImages make_noise_images(std::int64_t n, int resolution, int channels, Seed seed) {
  if (n < 1) throw ValidationError("make_noise_images: n must be >= 1");
  LabeledImages out;
  out.images = torch::empty({n, channels, resolution, resolution}, torch::kFloat32);
  auto* p = out.images.data_ptr<float>();
  Rng rng = make_rng(seed);
  std::uniform_real_distribution<float> u(0.0F, 1.0F);
  for (std::int64_t i = 0; i < out.images.numel(); ++i) p[i] = u(rng);
  out.labels.assign(static_cast<std::size_t>(n), 0);
  return out;
}

torch::Tensor conform(const torch::Tensor& images, int resolution, int channels) {
  auto x = images;
  if (x.size(1) != channels) {
    if (x.size(1) == 1) {
      x = x.repeat({1, channels, 1, 1});
    } else if (channels == 1) {
      x = x.mean(1, true);
    } else {
      throw ValidationError("cannot map " + std::to_string(x.size(1)) + " channels to " + std::to_string(channels));
    }
  }
  if (x.size(2) != resolution || x.size(3) != resolution) {
    x = torch::nn::functional::interpolate(
        x, torch::nn::functional::InterpolateFuncOptions()
               .size(std::vector<std::int64_t>{resolution, resolution})
               .mode(torch::kBilinear)
               .align_corners(false)
               .antialias(x.size(2) > resolution));
  }
  return x.clamp(0.0, 1.0).contiguous();
}

ProtocolData load_protocol(const ProtocolSpec& spec) {
  spec.validate();
  const auto root = spec.root.empty() ? default_data_root() : spec.root;
  ProtocolData out;
  std::vector<int> labels;
  torch::Tensor test;
  if (spec.kind == ProtocolKind::one_class) {
    const auto tr = load_dataset(spec.dataset, root, true, spec);
    std::vector<std::int64_t> normal;
    for (std::size_t i = 0; i < tr.labels.size(); ++i) {
      if (tr.labels[i] == spec.class_id) normal.push_back(static_cast<std::int64_t>(i));
    }
    if (normal.empty()) throw ValidationError("class " + std::to_string(spec.class_id) + " has no training samples");
    out.train = take(tr.images, normal);
    const auto te = load_dataset(spec.dataset, root, false, spec);
    test = te.images;
    for (int l : te.labels) labels.push_back(l == spec.class_id ? 0 : 1);
  } else {
    out.train = load_dataset(spec.in_dataset, root, true, spec).images;
    const auto in_test = load_dataset(spec.in_dataset, root, false, spec);
    const auto out_test = load_dataset(spec.out_dataset, root, false, spec);
    test = torch::cat({conform(in_test.images, spec.resolution, spec.channels),
                       conform(out_test.images, spec.resolution, spec.channels)});
    labels.assign(static_cast<std::size_t>(in_test.images.size(0)), 0);
    labels.insert(labels.end(), static_cast<std::size_t>(out_test.images.size(0)), 1);
  }

  const auto train_idx = sample_indices(out.train.size(0), spec.max_train, derive_seed(spec.split_seed, "train"));
  std::vector<std::int64_t> rest;
  for (std::int64_t i = 0, j = 0; i < out.train.size(0); ++i) {
    if (j < static_cast<std::int64_t>(train_idx.size()) && train_idx[static_cast<std::size_t>(j)] == i) {
      ++j;
    } else {
      rest.push_back(i);
    }
  }
  out.held_out = rest.empty() ? torch::empty({0, spec.channels, spec.resolution, spec.resolution})
                              : conform(take(out.train, rest), spec.resolution, spec.channels);
  out.train = conform(take(out.train, train_idx), spec.resolution, spec.channels);

  // Stratified test subsample keeps the anomaly fraction.
  std::vector<std::int64_t> keep;
  if (spec.max_test > 0 && spec.max_test < static_cast<std::int64_t>(labels.size())) {
    std::vector<std::int64_t> groups[2];
    for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(static_cast<std::int64_t>(i));
    const double frac = static_cast<double>(spec.max_test) / static_cast<double>(labels.size());
    for (int g = 0; g < 2; ++g) {
      const auto k = std::max<std::int64_t>(1, std::llround(frac * static_cast<double>(groups[g].size())));
      const auto picked = sample_indices(static_cast<std::int64_t>(groups[g].size()), k,
                                         derive_seed(spec.split_seed, g == 0 ? "test_normal" : "test_anomaly"));
      for (auto p : picked) keep.push_back(groups[g][static_cast<std::size_t>(p)]);
    }
    std::sort(keep.begin(), keep.end());
  } else {
    keep.resize(labels.size());
    std::iota(keep.begin(), keep.end(), 0);
  }
  out.test = conform(take(test, keep), spec.resolution, spec.channels);
  for (auto i : keep) out.test_labels.push_back(labels[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace cobra::data
