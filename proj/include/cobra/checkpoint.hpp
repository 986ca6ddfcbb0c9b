#pragma once

// Versioned single-file container for named tensors plus a JSON metadata block.
//
// Layout (little endian):
//   8 bytes  magic "COBRACKP"
//   u32      format version
//   u32      kind
//   u64      metadata length, then UTF-8 JSON
//   u64      tensor count, then per tensor:
//              u32 name length, name bytes, u8 dtype, u32 ndim, i64 dims[ndim],
//              u64 byte count, raw bytes
//   u64      FNV-1a checksum of every preceding byte

#include <filesystem>
#include <json.hpp>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cobra/common.hpp"

namespace cobra::io {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class CheckpointKind : std::uint32_t { model = 1, threshold = 2 };

struct CheckpointData {
  CheckpointKind kind = CheckpointKind::model;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, torch::Tensor>> tensors;

  void add(std::string name, const torch::Tensor& t);
  const torch::Tensor& tensor(const std::string& name) const;
  bool has(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data);

/// Throws NotFoundError, VersionError, CorruptFileError, or ValidationError when
/// `expected` is given and the stored kind differs.
CheckpointData read_checkpoint(const std::filesystem::path& path,
                               std::optional<CheckpointKind> expected = std::nullopt);

/// Copies every parameter and buffer of `module` into `data` under `prefix`.
void export_module(const torch::nn::Module& module, const std::string& prefix, CheckpointData& data);

/// Restores parameters and buffers of `module` from `data`; every tensor must be
/// present with a matching shape.
void import_module(torch::nn::Module& module, const std::string& prefix, const CheckpointData& data);

}  // namespace cobra::io
