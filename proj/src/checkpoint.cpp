#include "qareid/checkpoint.hpp"

#include <cstdint>
#include <fstream>

#include "qareid/errors.hpp"

namespace qareid {

namespace {

constexpr char kMagic[8] = {'Q', 'A', 'R', 'C', 'K', 'P', 'T', '1'};
constexpr uint64_t kMaxBlob = 1ull << 32;

void write_u64(std::ostream& os, uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint64_t read_u64(std::istream& is, const std::string& what) {
  uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(v)))
    throw IoError("checkpoint truncated while reading " + what);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, sizeof(kMagic));
  const std::string meta = ckpt.meta.dump();
  write_u64(os, meta.size());
  os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  write_u64(os, ckpt.tensors.size());
  for (const auto& [name, t] : ckpt.tensors) {
    write_u64(os, name.size());
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u64(os, static_cast<uint64_t>(t.ndim()));
    for (int d = 0; d < t.ndim(); ++d) write_u64(os, static_cast<uint64_t>(t.dim(d)));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  if (!os) throw IoError("write failure on checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::string(magic, 8) != std::string(kMagic, 8))
    throw IoError("not a checkpoint file: " + path);

  Checkpoint ckpt;
  const uint64_t meta_len = read_u64(is, "meta length");
  if (meta_len > kMaxBlob) throw IoError("corrupt checkpoint meta length");
  std::string meta(meta_len, '\0');
  if (!is.read(meta.data(), static_cast<std::streamsize>(meta_len)))
    throw IoError("checkpoint truncated while reading meta");
  try {
    ckpt.meta = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint meta is not valid JSON: ") + e.what());
  }

  const uint64_t count = read_u64(is, "tensor count");
  if (count > 1u << 20) throw IoError("corrupt checkpoint tensor count");
  for (uint64_t i = 0; i < count; ++i) {
    const uint64_t name_len = read_u64(is, "tensor name length");
    if (name_len > 4096) throw IoError("corrupt checkpoint tensor name");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), static_cast<std::streamsize>(name_len)))
      throw IoError("checkpoint truncated while reading tensor name");
    const uint64_t ndim = read_u64(is, "tensor rank");
    if (ndim > 8) throw IoError("corrupt checkpoint tensor rank");
    std::vector<int64_t> dims(ndim);
    uint64_t numel = 1;
    for (uint64_t d = 0; d < ndim; ++d) {
      dims[d] = static_cast<int64_t>(read_u64(is, "tensor dim"));
      if (dims[d] < 0 || (dims[d] > 0 && numel > kMaxBlob / static_cast<uint64_t>(dims[d])))
        throw IoError("corrupt checkpoint tensor shape");
      numel *= static_cast<uint64_t>(dims[d]);
    }
    Tensor t(dims);
    if (!is.read(reinterpret_cast<char*>(t.data()),
                 static_cast<std::streamsize>(numel * sizeof(double))))
      throw IoError("checkpoint truncated while reading tensor " + name);
    ckpt.tensors.emplace(std::move(name), std::move(t));
  }
  return ckpt;
}

}  // namespace qareid
