#include "cobra/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cobra::augment {

namespace {

struct ParamRule {
  const char* name;
  double value;
  double lo;
  double hi;
};

// Defaults and admissible ranges per transform.
std::vector<ParamRule> rules_for(TransformId id) {
  switch (id) {
    case TransformId::jigsaw:
      return {{"grid", 2, 2, 2}};
    case TransformId::random_erasing:
      return {{"min_area", 0.10, 0.10, 0.50},
              {"max_area", 0.50, 0.10, 0.50},
              {"min_aspect", 0.3, 0.1, 10.0},
              {"max_aspect", 3.3, 0.1, 10.0}};
    case TransformId::cutpaste:
      return {{"min_side", 0.10, 0.10, 0.50}, {"max_side", 0.50, 0.10, 0.50}};
    case TransformId::rotation:
      return {{"min_deg", -90.0, -90.0, 90.0}, {"max_deg", 90.0, -90.0, 90.0}};
    case TransformId::extreme_blur:
      return {{"sigma", 2.5, 0.5, 10.0}, {"max_kernel_frac", 0.05, 0.0, 0.05}};
    case TransformId::intense_crop:
      return {{"min_area", 0.50, 0.50, 0.80}, {"max_area", 0.80, 0.50, 0.80}};
    case TransformId::noise_injection:
      return {{"mean", 0.0, -0.5, 0.5}, {"std", 0.1, 0.0, 1.0}};
    case TransformId::extreme_crop:
      return {{"min_area", 0.40, 0.40, 0.60}, {"max_area", 0.60, 0.40, 0.60}};
    case TransformId::mixup:
      return {{"alpha", 0.1, 1e-3, 1.0}};
    case TransformId::cutout:
      return {{"side_frac", 0.25, 0.05, 0.5}, {"fill", 0.5, 0.0, 1.0}};
    case TransformId::cutmix:
      return {{"area_frac", 0.20, 0.05, 0.5}};
    case TransformId::elastic:
      // Pixel units on a 32-pixel canvas, scaled with resolution.
      return {{"displacement_std", 4.0, 0.0, 16.0}, {"smoothing", 3.0, 0.5, 16.0}};
  }
  return {};
}

// Dense float image, channel-major.
struct Image {
  std::int64_t c = 0, h = 0, w = 0;
  std::vector<float> px;

  Image() = default;
  Image(std::int64_t c_, std::int64_t h_, std::int64_t w_, float fill = 0.f)
      : c(c_), h(h_), w(w_), px(static_cast<std::size_t>(c_ * h_ * w_), fill) {}

  float& at(std::int64_t ch, std::int64_t y, std::int64_t x) {
    return px[static_cast<std::size_t>((ch * h + y) * w + x)];
  }
  float at(std::int64_t ch, std::int64_t y, std::int64_t x) const {
    return px[static_cast<std::size_t>((ch * h + y) * w + x)];
  }
};

Image from_tensor(const torch::Tensor& t) {
  const auto f = t.detach().to(torch::kCPU, torch::kFloat32).contiguous();
  Image img(f.size(0), f.size(1), f.size(2));
  std::copy_n(f.data_ptr<float>(), img.px.size(), img.px.begin());
  return img;
}

torch::Tensor to_tensor(const Image& img, torch::ScalarType dtype) {
  auto t = torch::empty({img.c, img.h, img.w}, torch::kFloat32);
  std::copy(img.px.begin(), img.px.end(), t.data_ptr<float>());
  return t.to(dtype);
}

void clip01(Image& img) {
  for (auto& v : img.px) v = std::clamp(v, 0.f, 1.f);
}

// Mirror a continuous coordinate into [0, n - 1] (reflection about pixel centers).
double reflect_coord(double u, std::int64_t n) {
  if (n <= 1) return 0.0;
  const double period = 2.0 * static_cast<double>(n - 1);
  u = std::fmod(std::fabs(u), period);
  if (u > static_cast<double>(n - 1)) u = period - u;
  return u;
}

std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
  return static_cast<std::int64_t>(reflect_coord(static_cast<double>(i), n));
}

float bilinear(const Image& img, std::int64_t ch, double y, double x) {
  y = reflect_coord(y, img.h);
  x = reflect_coord(x, img.w);
  const auto y0 = static_cast<std::int64_t>(std::floor(y));
  const auto x0 = static_cast<std::int64_t>(std::floor(x));
  const auto y1 = std::min(y0 + 1, img.h - 1);
  const auto x1 = std::min(x0 + 1, img.w - 1);
  const double fy = y - static_cast<double>(y0);
  const double fx = x - static_cast<double>(x0);
  if (fy == 0.0 && fx == 0.0) return img.at(ch, y0, x0);
  const double top = (1.0 - fx) * img.at(ch, y0, x0) + fx * img.at(ch, y0, x1);
  const double bottom = (1.0 - fx) * img.at(ch, y1, x0) + fx * img.at(ch, y1, x1);
  return static_cast<float>((1.0 - fy) * top + fy * bottom);
}

// out(y, x) = in(src(y, x)) with bilinear sampling and reflect padding.
template <typename Map>
Image warp(const Image& in, Map&& src) {
  Image out(in.c, in.h, in.w);
  for (std::int64_t y = 0; y < in.h; ++y) {
    for (std::int64_t x = 0; x < in.w; ++x) {
      const auto [sy, sx] = src(y, x);
      for (std::int64_t ch = 0; ch < in.c; ++ch) out.at(ch, y, x) = bilinear(in, ch, sy, sx);
    }
  }
  return out;
}

// Resize the box `r` of `in` back to the full canvas.
Image resized_crop(const Image& in, const Region& r) {
  const double sy = static_cast<double>(r.height) / static_cast<double>(in.h);
  const double sx = static_cast<double>(r.width) / static_cast<double>(in.w);
  return warp(in, [&](std::int64_t y, std::int64_t x) {
    return std::pair{static_cast<double>(r.top) + (static_cast<double>(y) + 0.5) * sy - 0.5,
                     static_cast<double>(r.left) + (static_cast<double>(x) + 0.5) * sx - 0.5};
  });
}

std::vector<double> gaussian_kernel(double sigma, std::int64_t radius) {
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (std::int64_t i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    sum += v;
  }
  for (auto& v : k) v /= sum;
  return k;
}

// Separable convolution of one plane (h x w doubles) with reflect borders.
std::vector<double> blur_plane(const std::vector<double>& in, std::int64_t h, std::int64_t w,
                               const std::vector<double>& k) {
  const auto radius = static_cast<std::int64_t>(k.size() / 2);
  std::vector<double> tmp(in.size()), out(in.size());
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (std::int64_t d = -radius; d <= radius; ++d) {
        acc += k[static_cast<std::size_t>(d + radius)] * in[static_cast<std::size_t>(y * w + reflect_index(x + d, w))];
      }
      tmp[static_cast<std::size_t>(y * w + x)] = acc;
    }
  }
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (std::int64_t d = -radius; d <= radius; ++d) {
        acc += k[static_cast<std::size_t>(d + radius)] * tmp[static_cast<std::size_t>(reflect_index(y + d, h) * w + x)];
      }
      out[static_cast<std::size_t>(y * w + x)] = acc;
    }
  }
  return out;
}

Image gaussian_blur(const Image& in, double sigma, std::int64_t kernel_size) {
  const auto k = gaussian_kernel(sigma, kernel_size / 2);
  Image out(in.c, in.h, in.w);
  std::vector<double> plane(static_cast<std::size_t>(in.h * in.w));
  for (std::int64_t ch = 0; ch < in.c; ++ch) {
    for (std::int64_t i = 0; i < in.h * in.w; ++i) plane[static_cast<std::size_t>(i)] = in.px[static_cast<std::size_t>(ch * in.h * in.w + i)];
    const auto b = blur_plane(plane, in.h, in.w, k);
    for (std::int64_t i = 0; i < in.h * in.w; ++i) {
      out.px[static_cast<std::size_t>(ch * in.h * in.w + i)] = static_cast<float>(b[static_cast<std::size_t>(i)]);
    }
  }
  return out;
}

std::int64_t scaled_len(double frac, std::int64_t n) {
  return std::clamp<std::int64_t>(static_cast<std::int64_t>(std::llround(frac * static_cast<double>(n))), 1, n);
}

// Square-ish box covering `area_frac` of the image at a random position.
Region random_box(Rng& rng, std::int64_t h, std::int64_t w, double area_frac) {
  const double side = std::sqrt(area_frac);
  Region r;
  r.height = scaled_len(side, h);
  r.width = scaled_len(side, w);
  r.top = uniform_int(rng, 0, h - r.height);
  r.left = uniform_int(rng, 0, w - r.width);
  return r;
}

std::int64_t pick_donor(Rng& rng, std::int64_t pool) {
  return uniform_int(rng, 0, pool - 1);
}

Image apply_one(const Image& img, const TransformSpec& spec, Rng& rng, const torch::Tensor& donors,
                TransformRecord& rec) {
  rec.id = spec.id;
  const auto H = img.h;
  const auto W = img.w;
  switch (spec.id) {
    case TransformId::jigsaw: {
      const auto grid = static_cast<std::int64_t>(spec.param("grid"));
      const auto th = H / grid;
      const auto tw = W / grid;
      const auto tiles = grid * grid;
      std::vector<int> perm(static_cast<std::size_t>(tiles));
      std::iota(perm.begin(), perm.end(), 0);
      // Reject the identity so the output always differs structurally.
      do {
        std::shuffle(perm.begin(), perm.end(), rng);
      } while (std::is_sorted(perm.begin(), perm.end()));
      Image out = img;
      for (std::int64_t k = 0; k < tiles; ++k) {
        const auto src = perm[static_cast<std::size_t>(k)];
        const auto dy = (k / grid) * th, dx = (k % grid) * tw;
        const auto sy = (src / grid) * th, sx = (src % grid) * tw;
        for (std::int64_t ch = 0; ch < img.c; ++ch) {
          for (std::int64_t y = 0; y < th; ++y) {
            for (std::int64_t x = 0; x < tw; ++x) out.at(ch, dy + y, dx + x) = img.at(ch, sy + y, sx + x);
          }
        }
      }
      rec.permutation = perm;
      return out;
    }
    case TransformId::random_erasing: {
      const double area = uniform(rng, spec.param("min_area"), spec.param("max_area")) * static_cast<double>(H * W);
      Region r;
      bool placed = false;
      for (int attempt = 0; attempt < 10 && !placed; ++attempt) {
        const double log_ratio = uniform(rng, std::log(spec.param("min_aspect")), std::log(spec.param("max_aspect")));
        const double ratio = std::exp(log_ratio);
        r.height = static_cast<std::int64_t>(std::llround(std::sqrt(area * ratio)));
        r.width = static_cast<std::int64_t>(std::llround(std::sqrt(area / ratio)));
        placed = r.height >= 1 && r.width >= 1 && r.height <= H && r.width <= W;
      }
      if (!placed) {
        r.height = scaled_len(std::sqrt(area) / static_cast<double>(H), H);
        r.width = scaled_len(std::sqrt(area) / static_cast<double>(W), W);
      }
      r.top = uniform_int(rng, 0, H - r.height);
      r.left = uniform_int(rng, 0, W - r.width);
      Image out = img;
      for (std::int64_t ch = 0; ch < img.c; ++ch) {
        for (std::int64_t y = r.top; y < r.top + r.height; ++y) {
          for (std::int64_t x = r.left; x < r.left + r.width; ++x) out.at(ch, y, x) = static_cast<float>(uniform(rng));
        }
      }
      rec.region = r;
      return out;
    }
    case TransformId::cutpaste: {
      const double frac = uniform(rng, spec.param("min_side"), spec.param("max_side"));
      Region src;
      src.height = scaled_len(frac, H);
      src.width = scaled_len(frac, W);
      src.top = uniform_int(rng, 0, H - src.height);
      src.left = uniform_int(rng, 0, W - src.width);
      Region dst = src;
      for (int attempt = 0; attempt < 16 && dst.top == src.top && dst.left == src.left; ++attempt) {
        dst.top = uniform_int(rng, 0, H - src.height);
        dst.left = uniform_int(rng, 0, W - src.width);
      }
      Image out = img;
      for (std::int64_t ch = 0; ch < img.c; ++ch) {
        for (std::int64_t y = 0; y < src.height; ++y) {
          for (std::int64_t x = 0; x < src.width; ++x) {
            out.at(ch, dst.top + y, dst.left + x) = img.at(ch, src.top + y, src.left + x);
          }
        }
      }
      rec.source = src;
      rec.region = dst;
      return out;
    }
    case TransformId::rotation: {
      const double deg = uniform(rng, spec.param("min_deg"), spec.param("max_deg"));
      rec.angle_deg = deg;
      const double th = deg * M_PI / 180.0;
      const double c = std::cos(th), s = std::sin(th);
      const double cy = 0.5 * static_cast<double>(H - 1), cx = 0.5 * static_cast<double>(W - 1);
      return warp(img, [&](std::int64_t y, std::int64_t x) {
        const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
        return std::pair{-s * dx + c * dy + cy, c * dx + s * dy + cx};
      });
    }
    case TransformId::extreme_blur: {
      // Kernel of up to max_kernel_frac of the width, never below 5 so low-resolution
      // images are still visibly blurred.
      auto kmax = static_cast<std::int64_t>(std::llround(spec.param("max_kernel_frac") * static_cast<double>(W)));
      kmax = std::max<std::int64_t>(kmax | 1, 5);
      const auto k = 2 * uniform_int(rng, 1, kmax / 2) + 1;
      return gaussian_blur(img, spec.param("sigma"), k);
    }
    case TransformId::intense_crop: {
      const double area = uniform(rng, spec.param("min_area"), spec.param("max_area"));
      const auto r = random_box(rng, H, W, area);
      rec.region = r;
      return resized_crop(img, r);
    }
    case TransformId::noise_injection: {
      Image out = img;
      const double mean = spec.param("mean"), sd = spec.param("std");
      for (auto& v : out.px) v = static_cast<float>(v + mean + sd * normal(rng));
      clip01(out);
      return out;
    }
    case TransformId::extreme_crop: {
      const double side = std::sqrt(uniform(rng, spec.param("min_area"), spec.param("max_area")));
      Region r;
      r.height = scaled_len(side, H);
      r.width = scaled_len(side, W);
      r.top = (H - r.height) / 2;
      r.left = (W - r.width) / 2;
      rec.region = r;
      return resized_crop(img, r);
    }
    case TransformId::mixup: {
      const auto d = pick_donor(rng, donors.size(0));
      const double lam = beta(rng, spec.param("alpha"), spec.param("alpha"));
      const Image donor = from_tensor(donors[d]);
      Image out(img.c, H, W);
      for (std::size_t i = 0; i < out.px.size(); ++i) {
        out.px[i] = static_cast<float>(lam * img.px[i] + (1.0 - lam) * donor.px[i]);
      }
      rec.donor = d;
      rec.mix_weight = lam;
      return out;
    }
    case TransformId::cutout: {
      Region r;
      r.height = scaled_len(spec.param("side_frac"), W);
      r.width = r.height;
      if (r.height > H) r.height = H;
      r.top = uniform_int(rng, 0, H - r.height);
      r.left = uniform_int(rng, 0, W - r.width);
      const auto fill = static_cast<float>(spec.param("fill"));
      Image out = img;
      for (std::int64_t ch = 0; ch < img.c; ++ch) {
        for (std::int64_t y = r.top; y < r.top + r.height; ++y) {
          for (std::int64_t x = r.left; x < r.left + r.width; ++x) out.at(ch, y, x) = fill;
        }
      }
      rec.region = r;
      return out;
    }
    case TransformId::cutmix: {
      const auto d = pick_donor(rng, donors.size(0));
      const auto r = random_box(rng, H, W, spec.param("area_frac"));
      const Image donor = from_tensor(donors[d]);
      Image out = img;
      for (std::int64_t ch = 0; ch < img.c; ++ch) {
        for (std::int64_t y = r.top; y < r.top + r.height; ++y) {
          for (std::int64_t x = r.left; x < r.left + r.width; ++x) out.at(ch, y, x) = donor.at(ch, y, x);
        }
      }
      rec.donor = d;
      rec.region = r;
      return out;
    }
    case TransformId::elastic: {
      const double scale = static_cast<double>(W) / 32.0;
      const double target_sd = spec.param("displacement_std") * scale;
      const double smooth = spec.param("smoothing") * scale;
      const auto radius = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(3.0 * smooth)));
      const auto k = gaussian_kernel(smooth, radius);
      auto field = [&] {
        std::vector<double> f(static_cast<std::size_t>(H * W));
        for (auto& v : f) v = normal(rng);
        f = blur_plane(f, H, W, k);
        double mean = 0.0, sq = 0.0;
        for (double v : f) mean += v;
        mean /= static_cast<double>(f.size());
        for (double v : f) sq += (v - mean) * (v - mean);
        const double sd = std::sqrt(sq / static_cast<double>(f.size()));
        for (auto& v : f) v = sd > 0.0 ? (v - mean) / sd * target_sd : 0.0;
        return f;
      };
      const auto dy = field();
      const auto dx = field();
      return warp(img, [&](std::int64_t y, std::int64_t x) {
        const auto i = static_cast<std::size_t>(y * W + x);
        return std::pair{static_cast<double>(y) + dy[i], static_cast<double>(x) + dx[i]};
      });
    }
  }
  throw ValidationError("unknown transform id");
}

}  // namespace

std::string_view to_string(TransformId id) {
  switch (id) {
    case TransformId::jigsaw: return "jigsaw";
    case TransformId::random_erasing: return "random_erasing";
    case TransformId::cutpaste: return "cutpaste";
    case TransformId::rotation: return "rotation";
    case TransformId::extreme_blur: return "extreme_blur";
    case TransformId::intense_crop: return "intense_crop";
    case TransformId::noise_injection: return "noise_injection";
    case TransformId::extreme_crop: return "extreme_crop";
    case TransformId::mixup: return "mixup";
    case TransformId::cutout: return "cutout";
    case TransformId::cutmix: return "cutmix";
    case TransformId::elastic: return "elastic";
  }
  return "?";
}

TransformId parse_transform_id(std::string_view name) {
  for (auto id : kAllTransforms) {
    if (to_string(id) == name) return id;
  }
  throw ValidationError("unknown transform id '" + std::string(name) + "'");
}

TransformSpec TransformSpec::defaults(TransformId id) {
  TransformSpec spec;
  spec.id = id;
  for (const auto& r : rules_for(id)) spec.params[r.name] = r.value;
  return spec;
}

double TransformSpec::param(const std::string& key) const {
  const auto it = params.find(key);
  if (it == params.end()) {
    throw ValidationError(std::string(to_string(id)) + ": missing parameter '" + key + "'");
  }
  return it->second;
}

TransformSpec TransformSpec::with(const std::string& key, double value) const {
  TransformSpec copy = *this;
  copy.params[key] = value;
  return copy;
}

void validate(const TransformSpec& spec) {
  const auto rules = rules_for(spec.id);
  const std::string tag(to_string(spec.id));
  for (const auto& [key, value] : spec.params) {
    const auto it = std::find_if(rules.begin(), rules.end(), [&](const ParamRule& r) { return key == r.name; });
    if (it == rules.end()) throw ValidationError(tag + ": unknown parameter '" + key + "'");
    if (!std::isfinite(value) || value < it->lo || value > it->hi) {
      throw ValidationError(tag + "." + key + "=" + std::to_string(value) + " outside [" + std::to_string(it->lo) +
                            ", " + std::to_string(it->hi) + "]");
    }
  }
  for (const auto& r : rules) {
    if (!spec.params.contains(r.name)) throw ValidationError(tag + ": missing parameter '" + r.name + "'");
  }
  for (const auto& [key, value] : spec.params) {
    if (key.rfind("min_", 0) == 0) {
      const auto other = "max_" + key.substr(4);
      if (spec.params.contains(other) && value > spec.params.at(other)) {
        throw ValidationError(tag + ": " + key + " exceeds " + other);
      }
    }
  }
}

std::vector<TransformSpec> default_bank() {
  std::vector<TransformSpec> bank;
  for (auto id : kAllTransforms) bank.push_back(TransformSpec::defaults(id));
  return bank;
}

torch::Tensor apply_hard_sequence_to(const torch::Tensor& image, std::span<const TransformSpec> seq, Seed seed,
                                     const torch::Tensor& donors, SampleLog* log) {
  if (seq.empty()) throw ValidationError("apply_hard_sequence: empty transform sequence");
  if (image.dim() != 3) throw ValidationError("apply_hard_sequence: expected a (C, H, W) image");
  for (const auto& t : seq) {
    validate(t);
    if (t.needs_donor() && (!donors.defined() || donors.size(0) == 0)) {
      throw ValidationError(std::string(to_string(t.id)) + " requires a donor pool");
    }
  }
  Rng rng = make_rng(seed);
  Image img = from_tensor(image);
  for (const auto& t : seq) {
    TransformRecord rec;
    img = apply_one(img, t, rng, donors, rec);
    clip01(img);
    if (log) log->push_back(std::move(rec));
  }
  return to_tensor(img, image.scalar_type());
}

torch::Tensor apply_hard_sequence(const torch::Tensor& x, std::span<const TransformSpec> seq, Seed seed,
                                  std::vector<SampleLog>* logs, int workers) {
  check_image_batch(x, "apply_hard_sequence");
  if (seq.empty()) throw ValidationError("apply_hard_sequence: empty transform sequence");
  const auto n = x.size(0);
  const auto src = x.detach().contiguous();
  std::vector<torch::Tensor> out(static_cast<std::size_t>(n));
  if (logs) logs->assign(static_cast<std::size_t>(n), {});
  parallel_for(n, workers, [&](std::int64_t i) {
    out[static_cast<std::size_t>(i)] = apply_hard_sequence_to(
        src[i], seq, derive_seed(seed, static_cast<std::uint64_t>(i)), src,
        logs ? &(*logs)[static_cast<std::size_t>(i)] : nullptr);
  });
  return torch::stack(out);
}

std::vector<TransformSpec> sample_hard_sequence(Seed seed, std::span<const TransformSpec> bank) {
  const auto k = static_cast<std::int64_t>(bank.size());
  if (k < 2) throw ValidationError("sample_hard_sequence: bank needs at least 2 transforms");
  Rng rng = make_rng(seed);
  const auto m = k == 2 ? 2 : uniform_int(rng, 2, k - 1);
  std::vector<std::size_t> idx(bank.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<TransformSpec> seq;
  seq.reserve(static_cast<std::size_t>(m));
  for (std::int64_t i = 0; i < m; ++i) seq.push_back(bank[idx[static_cast<std::size_t>(i)]]);
  return seq;
}

std::string_view to_string(LightOp op) {
  switch (op) {
    case LightOp::color_jitter: return "color_jitter";
    case LightOp::random_grayscale: return "random_grayscale";
    case LightOp::random_crop: return "random_crop_80_100";
  }
  return "?";
}

LightOp parse_light_op(std::string_view name) {
  for (auto op : {LightOp::color_jitter, LightOp::random_grayscale, LightOp::random_crop}) {
    if (to_string(op) == name) return op;
  }
  if (name == "random_crop") return LightOp::random_crop;
  throw ValidationError("unknown light op '" + std::string(name) + "'");
}

namespace {

void luminance(const Image& img, std::vector<float>& gray) {
  gray.assign(static_cast<std::size_t>(img.h * img.w), 0.f);
  for (std::int64_t i = 0; i < img.h * img.w; ++i) {
    if (img.c == 3) {
      gray[static_cast<std::size_t>(i)] = 0.299f * img.px[static_cast<std::size_t>(i)] +
                                          0.587f * img.px[static_cast<std::size_t>(img.h * img.w + i)] +
                                          0.114f * img.px[static_cast<std::size_t>(2 * img.h * img.w + i)];
    } else {
      gray[static_cast<std::size_t>(i)] = img.px[static_cast<std::size_t>(i)];
    }
  }
}

Image light_view_one(Image img, const LightViewSpec& spec, Rng& rng, LightLog* log) {
  std::vector<float> gray;
  const auto plane = img.h * img.w;
  for (auto op : spec.ops) {
    LightRecord rec;
    rec.op = op;
    switch (op) {
      case LightOp::color_jitter: {
        if (uniform(rng) >= spec.jitter_prob) break;
        rec.applied = true;
        const double b = uniform(rng, std::max(0.0, 1.0 - spec.brightness), 1.0 + spec.brightness);
        const double c = uniform(rng, std::max(0.0, 1.0 - spec.contrast), 1.0 + spec.contrast);
        const double s = uniform(rng, std::max(0.0, 1.0 - spec.saturation), 1.0 + spec.saturation);
        for (auto& v : img.px) v = static_cast<float>(v * b);
        clip01(img);
        luminance(img, gray);
        const double mean = std::accumulate(gray.begin(), gray.end(), 0.0) / static_cast<double>(plane);
        for (auto& v : img.px) v = static_cast<float>(c * v + (1.0 - c) * mean);
        clip01(img);
        if (img.c == 3) {
          luminance(img, gray);
          for (std::int64_t ch = 0; ch < 3; ++ch) {
            for (std::int64_t i = 0; i < plane; ++i) {
              auto& v = img.px[static_cast<std::size_t>(ch * plane + i)];
              v = static_cast<float>(s * v + (1.0 - s) * gray[static_cast<std::size_t>(i)]);
            }
          }
          clip01(img);
        }
        break;
      }
      case LightOp::random_grayscale: {
        if (uniform(rng) >= spec.grayscale_prob) break;
        rec.applied = true;
        if (img.c == 3) {
          luminance(img, gray);
          for (std::int64_t ch = 0; ch < 3; ++ch) {
            std::copy(gray.begin(), gray.end(), img.px.begin() + ch * plane);
          }
        }
        break;
      }
      case LightOp::random_crop: {
        rec.applied = true;
        const double area = uniform(rng, spec.crop_min_area, spec.crop_max_area);
        const double log_ratio = uniform(rng, std::log(3.0 / 4.0), std::log(4.0 / 3.0));
        const double ratio = std::exp(log_ratio);
        const double hw = static_cast<double>(img.h * img.w) * area;
        Region r;
        // floor keeps the retained area at or below the drawn fraction; clamping to
        // the canvas only ever shrinks the box further.
        r.height = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::sqrt(hw / ratio)), 1, img.h);
        r.width = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::sqrt(hw * ratio)), 1, img.w);
        // Keep at least crop_min_area when clamping trimmed one side.
        const double min_area = spec.crop_min_area * static_cast<double>(img.h * img.w);
        while (static_cast<double>(r.height * r.width) < min_area) {
          if (r.height < img.h) ++r.height;
          else if (r.width < img.w) ++r.width;
          else break;
        }
        r.top = uniform_int(rng, 0, img.h - r.height);
        r.left = uniform_int(rng, 0, img.w - r.width);
        rec.crop = r;
        img = resized_crop(img, r);
        clip01(img);
        break;
      }
    }
    if (log) log->push_back(rec);
  }
  return img;
}

}  // namespace

torch::Tensor apply_light_view(const torch::Tensor& x, const LightViewSpec& spec, std::vector<LightLog>* logs,
                               int workers) {
  check_image_batch(x, "apply_light_view");
  if (spec.crop_min_area <= 0.0 || spec.crop_min_area > spec.crop_max_area || spec.crop_max_area > 1.0) {
    throw ValidationError("apply_light_view: crop area range must satisfy 0 < min <= max <= 1");
  }
  const auto n = x.size(0);
  const auto src = x.detach().contiguous();
  std::vector<torch::Tensor> out(static_cast<std::size_t>(n));
  if (logs) logs->assign(static_cast<std::size_t>(n), {});
  parallel_for(n, workers, [&](std::int64_t i) {
    Rng rng = make_rng(derive_seed(spec.seed, static_cast<std::uint64_t>(i)));
    auto img = light_view_one(from_tensor(src[i]), spec, rng, logs ? &(*logs)[static_cast<std::size_t>(i)] : nullptr);
    out[static_cast<std::size_t>(i)] = to_tensor(img, x.scalar_type());
  });
  return torch::stack(out);
}

}  // namespace cobra::augment
