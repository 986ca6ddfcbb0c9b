#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace cobra {

// Error hierarchy. The CLI maps these onto its exit-code contract.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad argument, config value or precondition violation.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A required file or dataset is absent.
class NotFoundError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint written by an incompatible format version.
class VersionError : public Error {
 public:
  using Error::Error;
};

/// Truncated or checksum-mismatched file.
class CorruptFileError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or gradient during optimization.
class NumericError : public Error {
 public:
  using Error::Error;
};

using Seed = std::uint64_t;
using Rng = std::mt19937_64;

/// SplitMix64 finalizer; mixes a 64-bit value into a well-distributed one.
std::uint64_t mix64(std::uint64_t x);

/// 64-bit FNV-1a over raw bytes.
std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t h = 0xcbf29ce484222325ULL);

/// Derives an independent child seed for a named stream ("craft", "views", ...).
Seed derive_seed(Seed root, std::string_view stream);

/// Derives an independent child seed for an indexed sub-stream.
Seed derive_seed(Seed root, std::uint64_t index);

inline Rng make_rng(Seed seed) { return Rng(mix64(seed)); }

/// Uniform double in [lo, hi).
double uniform(Rng& rng, double lo = 0.0, double hi = 1.0);

/// Uniform integer in [lo, hi] (inclusive).
std::int64_t uniform_int(Rng& rng, std::int64_t lo, std::int64_t hi);

double normal(Rng& rng);

/// Beta(a, b) draw from the ratio of two gamma draws.
double beta(Rng& rng, double a, double b);

/// Runs fn(i) for i in [0, n) on up to `workers` threads. fn must only touch
/// per-index state.
void parallel_for(std::int64_t n, int workers, const std::function<void(std::int64_t)>& fn);

/// Throws ValidationError unless x is a non-empty (N, C, H, W) floating batch with
/// finite values.
void check_image_batch(const torch::Tensor& x, std::string_view what);

/// Hex digest of a tensor's raw bytes (used for dataset and model fingerprints).
std::string tensor_fingerprint(const torch::Tensor& t);

}  // namespace cobra
