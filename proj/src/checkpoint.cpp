#include "cobra/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <iterator>

namespace cobra::io {

namespace {

constexpr std::array<char, 8> kMagic = {'C', 'O', 'B', 'R', 'A', 'C', 'K', 'P'};

std::uint8_t dtype_tag(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return 0;
    case torch::kFloat64: return 1;
    case torch::kInt64: return 2;
    case torch::kInt32: return 3;
    case torch::kUInt8: return 4;
    default: throw ValidationError(std::string("checkpoint: unsupported dtype ") + c10::toString(t));
  }
}

torch::ScalarType dtype_from_tag(std::uint8_t tag) {
  switch (tag) {
    case 0: return torch::kFloat32;
    case 1: return torch::kFloat64;
    case 2: return torch::kInt64;
    case 3: return torch::kInt32;
    case 4: return torch::kUInt8;
    default: throw CorruptFileError("checkpoint: unknown dtype tag " + std::to_string(tag));
  }
}

class Writer {
 public:
  template <typename T>
  void pod(const T& v) {
    bytes(&v, sizeof(T));
  }
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  const std::vector<char>& buffer() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(const std::vector<char>& buf, std::size_t end) : buf_(buf), end_(end) {}
  template <typename T>
  T pod() {
    T v;
    bytes(&v, sizeof(T));
    return v;
  }
  void bytes(void* out, std::size_t n) {
    if (pos_ + n > end_) throw CorruptFileError("checkpoint: truncated file");
    std::memcpy(out, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::string str(std::size_t n) {
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::vector<char>& buf_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

}  // namespace

void CheckpointData::add(std::string name, const torch::Tensor& t) {
  tensors.emplace_back(std::move(name), t.detach().cpu().contiguous().clone());
}

const torch::Tensor& CheckpointData::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw CorruptFileError("checkpoint: missing tensor '" + name + "'");
}

bool CheckpointData::has(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return true;
  }
  return false;
}

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
  Writer w;
  w.bytes(kMagic.data(), kMagic.size());
  w.pod(kCheckpointVersion);
  w.pod(static_cast<std::uint32_t>(data.kind));
  const std::string meta = data.meta.dump();
  w.pod(static_cast<std::uint64_t>(meta.size()));
  w.bytes(meta.data(), meta.size());
  w.pod(static_cast<std::uint64_t>(data.tensors.size()));
  for (const auto& [name, tensor] : data.tensors) {
    const auto t = tensor.detach().cpu().contiguous();
    w.pod(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.pod(dtype_tag(t.scalar_type()));
    w.pod(static_cast<std::uint32_t>(t.dim()));
    for (auto d : t.sizes()) w.pod(static_cast<std::int64_t>(d));
    const auto nbytes = static_cast<std::uint64_t>(t.numel()) * t.element_size();
    w.pod(nbytes);
    if (nbytes) w.bytes(t.data_ptr(), nbytes);
  }
  const auto checksum = fnv1a(w.buffer().data(), w.buffer().size());
  w.pod(checksum);

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("checkpoint: cannot open '" + tmp + "' for writing");
    out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
    if (!out) throw Error("checkpoint: write failed for '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

CheckpointData read_checkpoint(const std::filesystem::path& path, std::optional<CheckpointKind> expected) {
  if (!std::filesystem::exists(path)) throw NotFoundError("checkpoint not found: " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open checkpoint: " + path.string());
  const std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < kMagic.size() + 2 * sizeof(std::uint32_t) + sizeof(std::uint64_t)) {
    throw CorruptFileError("checkpoint: truncated file " + path.string());
  }
  if (!std::equal(kMagic.begin(), kMagic.end(), buf.begin())) {
    throw CorruptFileError("checkpoint: bad magic in " + path.string());
  }
  Reader r(buf, buf.size() - sizeof(std::uint64_t));
  r.str(kMagic.size());
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint " + path.string() + " has format version " + std::to_string(version) +
                       ", expected " + std::to_string(kCheckpointVersion));
  }
  std::uint64_t stored;
  std::memcpy(&stored, buf.data() + buf.size() - sizeof(stored), sizeof(stored));
  if (stored != fnv1a(buf.data(), buf.size() - sizeof(stored))) {
    throw CorruptFileError("checkpoint: checksum mismatch in " + path.string());
  }

  CheckpointData data;
  data.kind = static_cast<CheckpointKind>(r.pod<std::uint32_t>());
  if (expected && *expected != data.kind) {
    throw ValidationError("checkpoint " + path.string() + " holds a different artifact kind");
  }
  const auto meta_len = r.pod<std::uint64_t>();
  try {
    data.meta = nlohmann::json::parse(r.str(meta_len));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFileError(std::string("checkpoint: bad metadata: ") + e.what());
  }
  const auto count = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    auto name = r.str(r.pod<std::uint32_t>());
    const auto dtype = dtype_from_tag(r.pod<std::uint8_t>());
    const auto ndim = r.pod<std::uint32_t>();
    std::vector<std::int64_t> dims(ndim);
    for (auto& d : dims) d = r.pod<std::int64_t>();
    const auto nbytes = r.pod<std::uint64_t>();
    auto t = torch::empty(dims, torch::TensorOptions().dtype(dtype));
    if (static_cast<std::uint64_t>(t.numel()) * t.element_size() != nbytes) {
      throw CorruptFileError("checkpoint: size mismatch for tensor '" + name + "'");
    }
    if (nbytes) r.bytes(t.data_ptr(), nbytes);
    data.tensors.emplace_back(std::move(name), std::move(t));
  }
  return data;
}

void export_module(const torch::nn::Module& module, const std::string& prefix, CheckpointData& data) {
  for (const auto& p : module.named_parameters(true)) data.add(prefix + p.key(), p.value());
  for (const auto& b : module.named_buffers(true)) data.add(prefix + b.key(), b.value());
}

void import_module(torch::nn::Module& module, const std::string& prefix, const CheckpointData& data) {
  torch::NoGradGuard guard;
  auto restore = [&](const std::string& key, torch::Tensor& dst) {
    const auto& src = data.tensor(prefix + key);
    if (src.sizes() != dst.sizes()) throw CorruptFileError("checkpoint: shape mismatch for '" + prefix + key + "'");
    dst.copy_(src);
  };
  for (auto& p : module.named_parameters(true)) restore(p.key(), p.value());
  for (auto& b : module.named_buffers(true)) restore(b.key(), b.value());
}

}  // namespace cobra::io
