#include "cobra/common.hpp"

#include <cmath>
#include <cstdio>
#include <thread>
#include <vector>

namespace cobra {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

Seed derive_seed(Seed root, std::string_view stream) {
  return mix64(root ^ fnv1a(stream.data(), stream.size()));
}

Seed derive_seed(Seed root, std::uint64_t index) {
  return mix64(mix64(root) + 0x632be59bd9b4e019ULL * (index + 1));
}

double uniform(Rng& rng, double lo, double hi) {
  if (hi <= lo) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

std::int64_t uniform_int(Rng& rng, std::int64_t lo, std::int64_t hi) {
  if (hi < lo) throw ValidationError("uniform_int: empty range");
  return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng);
}

double normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

double beta(Rng& rng, double a, double b) {
  const double x = std::gamma_distribution<double>(a, 1.0)(rng);
  const double y = std::gamma_distribution<double>(b, 1.0)(rng);
  if (x + y <= 0.0) return 0.5;
  return x / (x + y);
}

void parallel_for(std::int64_t n, int workers, const std::function<void(std::int64_t)>& fn) {
  if (n <= 0) return;
  if (workers <= 1 || n == 1) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const auto threads = static_cast<std::int64_t>(std::min<std::int64_t>(workers, n));
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
  pool.reserve(static_cast<std::size_t>(threads));
  for (std::int64_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::int64_t i = t; i < n; i += threads) fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(t)] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void check_image_batch(const torch::Tensor& x, std::string_view what) {
  const std::string name(what);
  if (!x.defined()) throw ValidationError(name + ": undefined tensor");
  if (x.dim() != 4) throw ValidationError(name + ": expected (N, C, H, W), got " + std::to_string(x.dim()) + " dims");
  if (x.size(0) == 0) throw ValidationError(name + ": empty batch");
  if (!x.is_floating_point()) throw ValidationError(name + ": expected floating point pixels");
  if (!torch::isfinite(x).all().item<bool>()) throw ValidationError(name + ": non-finite pixel values");
}

std::string tensor_fingerprint(const torch::Tensor& t) {
  const auto c = t.detach().cpu().contiguous();
  std::uint64_t h = fnv1a(c.data_ptr(), static_cast<std::size_t>(c.numel()) * c.element_size());
  for (auto s : c.sizes()) h = fnv1a(&s, sizeof(s), h);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace cobra
