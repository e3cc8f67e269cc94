#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "st3/rng.hpp"
#include "st3/tensor.hpp"

namespace st3 {

struct AugmentPolicy {
  enum class Kind { kNone, kFlipCrop };
  Kind kind = Kind::kNone;
  int pad = 4;
  // Per-channel normalization, applied after augmentation. Empty = none.
  std::vector<float> mean;
  std::vector<float> stddev;
};

// Immutable after load; samples are stored contiguously in split order
// (train, then val, then test).
struct Dataset {
  std::string name;
  Shape sample_shape;  // per-sample, e.g. {dim} or {C, H, W}
  int64_t classes = 0;
  int64_t n = 0;
  std::vector<float> xs;
  std::vector<int32_t> labels;
  int64_t train_n = 0, val_n = 0, test_n = 0;
  AugmentPolicy augment;

  int64_t sample_numel() const { return shape_numel(sample_shape); }
  const float* sample(int64_t i) const { return xs.data() + i * sample_numel(); }
  // Offsets of the three splits into the sample array.
  int64_t split_offset(int split) const;  // 0 train, 1 val, 2 test
  int64_t split_size(int split) const;
  void validate() const;
};

struct Batch {
  Tensor x;
  std::vector<int32_t> labels;
};

// Isotropic Gaussian blobs with class means on a scaled coordinate
// simplex (mean_c = separation * e_c, needs dim >= classes). Exactly
// n_per_class samples per class; the global order is a seeded shuffle.
Dataset synth_gaussians(int64_t classes, int64_t dim, int64_t n_per_class,
                        uint64_t seed, double separation = 3.0,
                        double noise = 1.0);

// Labels are the argmax of a random He-initialized two-layer teacher
// network on N(0, 1) inputs; a harder desk-scale benchmark than blobs.
Dataset synth_teacher(int64_t classes, int64_t dim, int64_t n,
                      int64_t teacher_hidden, uint64_t seed);

struct IdxData {
  std::vector<int64_t> dims;
  std::vector<uint8_t> bytes;
};

// Reads one IDX file (magic 0x00000801/0x00000803 family: two zero bytes,
// u8 type code 0x08, dim count, big-endian extents).
IdxData read_idx(const std::string& path);

// Directory with the four standard MNIST files. subset_train caps the
// train split (9:1 train/val split of the capped prefix); full ignores it.
Dataset load_idx(const std::string& dir, bool full = false,
                 int64_t subset_train = 10000);

// Directory with data_batch_[1-5].bin / test_batch.bin (directly or under
// cifar-10-batches-bin/). Record = 1 label byte + 3072 pixel bytes.
Dataset load_cifar10(const std::string& dir, bool full = false,
                     int64_t subset_train = 10000);

// Deterministic per-epoch sample order for a split.
std::vector<int64_t> epoch_indices(int64_t n, uint64_t seed, int64_t epoch,
                                   bool shuffle);

// Assembles a batch from dataset-relative sample indices. aug_rng enables
// the random crop/flip policy (training); pass nullptr for eval.
Batch make_batch(const Dataset& data, std::span<const int64_t> indices,
                 Rng* aug_rng);

// In-place mirror along the width axis.
void flip_horizontal(float* img, int64_t c, int64_t h, int64_t w);
// Zero-pads by `pad` then crops h x w at offset (dy, dx), dy/dx in [0, 2*pad].
std::vector<float> pad_crop(const float* img, int64_t c, int64_t h, int64_t w,
                            int pad, int dy, int dx);

}  // namespace st3
