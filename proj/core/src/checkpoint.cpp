#include "st3/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace st3 {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written as native little-endian f32");

namespace {

constexpr char kMagic[7] = {'S', 'T', '3', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::ofstream& f, T v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& f, const std::string& path) {
  T v{};
  if (!f.read(reinterpret_cast<char*>(&v), sizeof(T)))
    fail(ErrorKind::kTruncatedFile, path + ": truncated checkpoint");
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::kIo, "cannot write " + path);
  f.write(kMagic, sizeof(kMagic));
  put<uint32_t>(f, ckpt.version);
  put<double>(f, ckpt.sp_ratio);
  put<double>(f, ckpt.achieved_sparsity);
  put<uint64_t>(f, ckpt.config_text.size());
  f.write(ckpt.config_text.data(),
          static_cast<std::streamsize>(ckpt.config_text.size()));
  put<uint32_t>(f, static_cast<uint32_t>(ckpt.records.size()));
  for (const auto& rec : ckpt.records) {
    put<uint32_t>(f, static_cast<uint32_t>(rec.name.size()));
    f.write(rec.name.data(), static_cast<std::streamsize>(rec.name.size()));
    put<uint8_t>(f, 0);  // f32
    put<uint32_t>(f, static_cast<uint32_t>(rec.shape.size()));
    for (int64_t d : rec.shape) put<uint32_t>(f, static_cast<uint32_t>(d));
    f.write(reinterpret_cast<const char*>(rec.values.data()),
            static_cast<std::streamsize>(rec.values.size() * sizeof(float)));
  }
  if (!f) fail(ErrorKind::kIo, "write failure on " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::kIo, "cannot open " + path);
  char magic[7];
  if (!f.read(magic, sizeof(magic)))
    fail(ErrorKind::kTruncatedFile, path + ": missing magic");
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    fail(ErrorKind::kBadMagic, path + ": not an ST3CKPT file");
  Checkpoint ckpt;
  ckpt.version = get<uint32_t>(f, path);
  if (ckpt.version != 1)
    fail(ErrorKind::kInvalidArgument,
         path + ": unsupported checkpoint version " + std::to_string(ckpt.version));
  ckpt.sp_ratio = get<double>(f, path);
  ckpt.achieved_sparsity = get<double>(f, path);
  const uint64_t cfg_len = get<uint64_t>(f, path);
  ckpt.config_text.resize(cfg_len);
  if (cfg_len && !f.read(ckpt.config_text.data(), static_cast<std::streamsize>(cfg_len)))
    fail(ErrorKind::kTruncatedFile, path + ": truncated config blob");
  const uint32_t n = get<uint32_t>(f, path);
  ckpt.records.resize(n);
  for (auto& rec : ckpt.records) {
    const uint32_t name_len = get<uint32_t>(f, path);
    rec.name.resize(name_len);
    if (!f.read(rec.name.data(), name_len))
      fail(ErrorKind::kTruncatedFile, path + ": truncated record name");
    const uint8_t dtype = get<uint8_t>(f, path);
    if (dtype != 0)
      fail(ErrorKind::kInvalidArgument, path + ": unknown dtype tag");
    const uint32_t ndim = get<uint32_t>(f, path);
    int64_t numel = 1;
    rec.shape.resize(ndim);
    for (auto& d : rec.shape) {
      d = get<uint32_t>(f, path);
      numel *= d;
    }
    rec.values.resize(static_cast<size_t>(numel));
    if (!f.read(reinterpret_cast<char*>(rec.values.data()),
                static_cast<std::streamsize>(rec.values.size() * sizeof(float))))
      fail(ErrorKind::kTruncatedFile, path + ": truncated payload for " + rec.name);
  }
  return ckpt;
}

void checkpoint_capture(Model& model, Checkpoint& ckpt) {
  ckpt.records.clear();
  for (const auto& p : model.prunable())
    ckpt.records.push_back({p.layer_name, p.raw.shape(), p.raw.data()});
  for (const auto& e : model.extras())
    ckpt.records.push_back({e.name, e.tensor.shape(), e.tensor.data()});
  for (const auto& [name, buf] : model.buffers())
    ckpt.records.push_back(
        {name, {static_cast<int64_t>(buf->size())}, *buf});
}

void checkpoint_apply(const Checkpoint& ckpt, Model& model) {
  auto find = [&](const std::string& name) -> const CheckpointRecord& {
    for (const auto& rec : ckpt.records)
      if (rec.name == name) return rec;
    fail(ErrorKind::kDimMismatch, "checkpoint misses parameter " + name);
  };
  for (auto& p : model.prunable()) {
    const auto& rec = find(p.layer_name);
    if (rec.shape != p.raw.shape())
      fail(ErrorKind::kDimMismatch, "checkpoint shape mismatch on " + p.layer_name);
    p.raw.data() = rec.values;
  }
  for (auto& e : model.extras()) {
    const auto& rec = find(e.name);
    if (rec.shape != e.tensor.shape())
      fail(ErrorKind::kDimMismatch, "checkpoint shape mismatch on " + e.name);
    e.tensor.data() = rec.values;
  }
  for (auto& [name, buf] : model.buffers()) {
    const auto& rec = find(name);
    if (rec.values.size() != buf->size())
      fail(ErrorKind::kDimMismatch, "checkpoint shape mismatch on " + name);
    *buf = rec.values;
  }
}

}  // namespace st3
