#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "st3/models.hpp"
#include "st3/tensor.hpp"

namespace st3 {

struct CheckpointRecord {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

// On-disk layout (all integers little-endian):
//   "ST3CKPT"                       7-byte magic
//   u32  format version (1)
//   f64  sp_ratio at save time
//   f64  achieved sparsity
//   u64  config text length, then the bytes (canonical config document)
//   u32  record count, then per record:
//        u32 name length + bytes, u8 dtype tag (0 = f32),
//        u32 ndim + u32 dims, raw little-endian f32 payload
struct Checkpoint {
  uint32_t version = 1;
  double sp_ratio = 0.0;
  double achieved_sparsity = 0.0;
  std::string config_text;
  std::vector<CheckpointRecord> records;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Snapshot of every raw weight, bias/affine parameter, and batch-norm
// buffer, in registry order.
void checkpoint_capture(Model& model, Checkpoint& ckpt);
// Restores a snapshot into a freshly built model of the same architecture.
void checkpoint_apply(const Checkpoint& ckpt, Model& model);

}  // namespace st3
