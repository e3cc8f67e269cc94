#include "st3/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace st3 {

namespace fs = std::filesystem;

int64_t Dataset::split_offset(int split) const {
  switch (split) {
    case 0: return 0;
    case 1: return train_n;
    case 2: return train_n + val_n;
  }
  fail(ErrorKind::kInvalidArgument, "bad split index");
}

int64_t Dataset::split_size(int split) const {
  switch (split) {
    case 0: return train_n;
    case 1: return val_n;
    case 2: return test_n;
  }
  fail(ErrorKind::kInvalidArgument, "bad split index");
}

void Dataset::validate() const {
  if (train_n + val_n + test_n != n)
    fail(ErrorKind::kDimMismatch, "dataset splits do not sum to total");
  if (static_cast<int64_t>(labels.size()) != n ||
      static_cast<int64_t>(xs.size()) != n * sample_numel())
    fail(ErrorKind::kDimMismatch, "dataset buffer sizes inconsistent");
  for (int32_t y : labels)
    if (y < 0 || y >= classes)
      fail(ErrorKind::kInvalidArgument, "dataset label out of range");
}

namespace {

// 45k/5k/10k CIFAR proportions applied to an arbitrary total.
void proportional_split(int64_t total, int64_t& train, int64_t& val,
                        int64_t& test) {
  val = total * 5 / 60;
  test = total * 10 / 60;
  train = total - val - test;
}

void shuffle_dataset(std::vector<float>& xs, std::vector<int32_t>& labels,
                     int64_t sample_numel, uint64_t seed) {
  const int64_t n = static_cast<int64_t>(labels.size());
  std::vector<int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng::stream(seed, 31);
  rng.shuffle(order.data(), order.size());
  std::vector<float> xs2(xs.size());
  std::vector<int32_t> lb2(labels.size());
  for (int64_t i = 0; i < n; ++i) {
    std::copy_n(xs.data() + order[i] * sample_numel, sample_numel,
                xs2.data() + i * sample_numel);
    lb2[i] = labels[order[i]];
  }
  xs = std::move(xs2);
  labels = std::move(lb2);
}

}  // namespace

Dataset synth_gaussians(int64_t classes, int64_t dim, int64_t n_per_class,
                        uint64_t seed, double separation, double noise) {
  if (classes < 2 || n_per_class < 1)
    fail(ErrorKind::kInvalidArgument, "synth_gaussians: bad class spec");
  if (dim < classes)
    fail(ErrorKind::kInvalidArgument,
         "synth_gaussians: dim must be >= classes for simplex means");
  const int64_t total = classes * n_per_class;
  Dataset d;
  d.name = "synth_gaussians";
  d.sample_shape = {dim};
  d.classes = classes;
  d.n = total;
  d.xs.resize(static_cast<size_t>(total * dim));
  d.labels.resize(static_cast<size_t>(total));
  Rng rng = Rng::stream(seed, 7);
  for (int64_t c = 0; c < classes; ++c) {
    for (int64_t i = 0; i < n_per_class; ++i) {
      const int64_t idx = c * n_per_class + i;
      float* x = d.xs.data() + idx * dim;
      for (int64_t k = 0; k < dim; ++k)
        x[k] = static_cast<float>(rng.normal(0.0, noise));
      x[c] += static_cast<float>(separation);
      d.labels[static_cast<size_t>(idx)] = static_cast<int32_t>(c);
    }
  }
  shuffle_dataset(d.xs, d.labels, dim, seed);
  proportional_split(total, d.train_n, d.val_n, d.test_n);
  d.validate();
  return d;
}

Dataset synth_teacher(int64_t classes, int64_t dim, int64_t n,
                      int64_t teacher_hidden, uint64_t seed) {
  if (classes < 2 || dim < 1 || n < classes || teacher_hidden < 1)
    fail(ErrorKind::kInvalidArgument, "synth_teacher: bad arguments");
  Dataset d;
  d.name = "synth_teacher";
  d.sample_shape = {dim};
  d.classes = classes;
  d.n = n;
  d.xs.resize(static_cast<size_t>(n * dim));
  d.labels.resize(static_cast<size_t>(n));

  // Fixed random teacher; independent stream from the sample noise.
  Rng wrng = Rng::stream(seed, 11);
  std::vector<float> w1(static_cast<size_t>(teacher_hidden * dim));
  std::vector<float> w2(static_cast<size_t>(classes * teacher_hidden));
  const double s1 = std::sqrt(2.0 / static_cast<double>(dim));
  const double s2 = std::sqrt(2.0 / static_cast<double>(teacher_hidden));
  for (float& v : w1) v = static_cast<float>(wrng.normal(0.0, s1));
  for (float& v : w2) v = static_cast<float>(wrng.normal(0.0, s2));

  Rng xrng = Rng::stream(seed, 13);
  std::vector<float> h(static_cast<size_t>(teacher_hidden));
  std::vector<float> logits(static_cast<size_t>(classes));
  for (int64_t i = 0; i < n; ++i) {
    float* x = d.xs.data() + i * dim;
    for (int64_t k = 0; k < dim; ++k)
      x[k] = static_cast<float>(xrng.normal());
    for (int64_t j = 0; j < teacher_hidden; ++j) {
      float acc = 0.0f;
      const float* row = w1.data() + j * dim;
      for (int64_t k = 0; k < dim; ++k) acc += row[k] * x[k];
      h[static_cast<size_t>(j)] = acc > 0.0f ? acc : 0.0f;
    }
    int32_t best = 0;
    for (int64_t c = 0; c < classes; ++c) {
      float acc = 0.0f;
      const float* row = w2.data() + c * teacher_hidden;
      for (int64_t j = 0; j < teacher_hidden; ++j) acc += row[j] * h[static_cast<size_t>(j)];
      logits[static_cast<size_t>(c)] = acc;
      if (acc > logits[static_cast<size_t>(best)]) best = static_cast<int32_t>(c);
    }
    d.labels[static_cast<size_t>(i)] = best;
  }
  proportional_split(n, d.train_n, d.val_n, d.test_n);
  d.validate();
  return d;
}

IdxData read_idx(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::kIo, "cannot open " + path);
  uint8_t header[4];
  if (!f.read(reinterpret_cast<char*>(header), 4))
    fail(ErrorKind::kTruncatedFile, path + ": missing IDX header");
  if (header[0] != 0 || header[1] != 0 || header[2] != 0x08)
    fail(ErrorKind::kBadMagic, path + ": not an unsigned-byte IDX file");
  const int ndims = header[3];
  if (ndims < 1 || ndims > 4)
    fail(ErrorKind::kBadMagic, path + ": implausible IDX dimension count");
  IdxData out;
  int64_t total = 1;
  for (int i = 0; i < ndims; ++i) {
    uint8_t b[4];
    if (!f.read(reinterpret_cast<char*>(b), 4))
      fail(ErrorKind::kTruncatedFile, path + ": truncated IDX dims");
    const int64_t dim = (int64_t(b[0]) << 24) | (int64_t(b[1]) << 16) |
                        (int64_t(b[2]) << 8) | int64_t(b[3]);
    out.dims.push_back(dim);
    total *= dim;
  }
  out.bytes.resize(static_cast<size_t>(total));
  if (!f.read(reinterpret_cast<char*>(out.bytes.data()), total))
    fail(ErrorKind::kTruncatedFile, path + ": payload shorter than header promises");
  return out;
}

namespace {

std::string pick_existing(const std::string& dir,
                          std::initializer_list<const char*> names) {
  for (const char* n : names) {
    fs::path p = fs::path(dir) / n;
    if (fs::exists(p)) return p.string();
  }
  fail(ErrorKind::kIo, "no dataset file found under " + dir);
}

}  // namespace

Dataset load_idx(const std::string& dir, bool full, int64_t subset_train) {
  IdxData timg = read_idx(pick_existing(
      dir, {"train-images-idx3-ubyte", "train-images.idx3-ubyte"}));
  IdxData tlab = read_idx(pick_existing(
      dir, {"train-labels-idx1-ubyte", "train-labels.idx1-ubyte"}));
  IdxData eimg = read_idx(pick_existing(
      dir, {"t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"}));
  IdxData elab = read_idx(pick_existing(
      dir, {"t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"}));
  if (timg.dims.size() != 3 || eimg.dims.size() != 3)
    fail(ErrorKind::kDimMismatch, "MNIST images must be 3-d IDX");
  if (tlab.dims.size() != 1 || elab.dims.size() != 1)
    fail(ErrorKind::kDimMismatch, "MNIST labels must be 1-d IDX");
  if (timg.dims[0] != tlab.dims[0] || eimg.dims[0] != elab.dims[0])
    fail(ErrorKind::kDimMismatch, "MNIST image/label counts disagree");
  const int64_t h = timg.dims[1], w = timg.dims[2];

  int64_t train_total = timg.dims[0];
  if (!full) train_total = std::min(train_total, subset_train);
  // 9:1 train/val carve-out, test = published test set.
  const int64_t val_n = train_total / 10;
  const int64_t train_n = train_total - val_n;
  const int64_t test_n = full ? eimg.dims[0] : std::min<int64_t>(eimg.dims[0], subset_train / 2);

  Dataset d;
  d.name = "mnist";
  d.sample_shape = {1, h, w};
  d.classes = 10;
  d.n = train_total + test_n;
  d.train_n = train_n;
  d.val_n = val_n;
  d.test_n = test_n;
  d.xs.resize(static_cast<size_t>(d.n * h * w));
  d.labels.resize(static_cast<size_t>(d.n));
  for (int64_t i = 0; i < train_total; ++i) {
    for (int64_t k = 0; k < h * w; ++k)
      d.xs[static_cast<size_t>(i * h * w + k)] =
          static_cast<float>(timg.bytes[static_cast<size_t>(i * h * w + k)]) / 255.0f;
    d.labels[static_cast<size_t>(i)] = tlab.bytes[static_cast<size_t>(i)];
  }
  for (int64_t i = 0; i < test_n; ++i) {
    const int64_t dst = train_total + i;
    for (int64_t k = 0; k < h * w; ++k)
      d.xs[static_cast<size_t>(dst * h * w + k)] =
          static_cast<float>(eimg.bytes[static_cast<size_t>(i * h * w + k)]) / 255.0f;
    d.labels[static_cast<size_t>(dst)] = elab.bytes[static_cast<size_t>(i)];
  }
  d.augment.mean = {0.1307f};
  d.augment.stddev = {0.3081f};
  d.validate();
  return d;
}

Dataset load_cifar10(const std::string& dir, bool full, int64_t subset_train) {
  std::string root = dir;
  if (fs::exists(fs::path(dir) / "cifar-10-batches-bin"))
    root = (fs::path(dir) / "cifar-10-batches-bin").string();

  constexpr int64_t kRecord = 3073;
  constexpr int64_t kPerFile = 10000;
  constexpr int64_t kPixels = 3072;

  auto read_batch = [&](const std::string& path, std::vector<float>& xs,
                        std::vector<int32_t>& labels) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail(ErrorKind::kIo, "cannot open " + path);
    f.seekg(0, std::ios::end);
    const int64_t size = f.tellg();
    f.seekg(0);
    if (size != kRecord * kPerFile)
      fail(ErrorKind::kTruncatedFile,
           path + ": expected " + std::to_string(kRecord * kPerFile) +
               " bytes, found " + std::to_string(size));
    std::vector<uint8_t> buf(static_cast<size_t>(size));
    if (!f.read(reinterpret_cast<char*>(buf.data()), size))
      fail(ErrorKind::kTruncatedFile, path + ": short read");
    for (int64_t i = 0; i < kPerFile; ++i) {
      const uint8_t* rec = buf.data() + i * kRecord;
      if (rec[0] > 9)
        fail(ErrorKind::kDimMismatch, path + ": label byte out of range");
      labels.push_back(rec[0]);
      for (int64_t k = 0; k < kPixels; ++k)
        xs.push_back(static_cast<float>(rec[1 + k]) / 255.0f);
    }
  };

  std::vector<float> train_xs;
  std::vector<int32_t> train_labels;
  const int files = full ? 5 : std::max<int>(1, static_cast<int>((subset_train + kPerFile - 1) / kPerFile));
  for (int i = 1; i <= files; ++i)
    read_batch((fs::path(root) / ("data_batch_" + std::to_string(i) + ".bin")).string(),
               train_xs, train_labels);
  std::vector<float> test_xs;
  std::vector<int32_t> test_labels;
  read_batch((fs::path(root) / "test_batch.bin").string(), test_xs, test_labels);

  int64_t train_total = static_cast<int64_t>(train_labels.size());
  if (!full) train_total = std::min(train_total, subset_train);
  const int64_t val_n = train_total / 10;
  const int64_t train_n = train_total - val_n;
  const int64_t test_n =
      full ? static_cast<int64_t>(test_labels.size())
           : std::min<int64_t>(static_cast<int64_t>(test_labels.size()), subset_train / 2);

  Dataset d;
  d.name = "cifar10";
  d.sample_shape = {3, 32, 32};
  d.classes = 10;
  d.n = train_total + test_n;
  d.train_n = train_n;
  d.val_n = val_n;
  d.test_n = test_n;
  d.xs.assign(train_xs.begin(), train_xs.begin() + train_total * kPixels);
  d.xs.insert(d.xs.end(), test_xs.begin(), test_xs.begin() + test_n * kPixels);
  d.labels.assign(train_labels.begin(), train_labels.begin() + train_total);
  d.labels.insert(d.labels.end(), test_labels.begin(), test_labels.begin() + test_n);
  d.augment.kind = AugmentPolicy::Kind::kFlipCrop;
  d.augment.pad = 4;
  d.augment.mean = {0.4914f, 0.4822f, 0.4465f};
  d.augment.stddev = {0.2470f, 0.2435f, 0.2616f};
  d.validate();
  return d;
}

std::vector<int64_t> epoch_indices(int64_t n, uint64_t seed, int64_t epoch,
                                   bool shuffle) {
  std::vector<int64_t> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  if (shuffle) {
    Rng rng = Rng::stream(seed, 101, static_cast<uint64_t>(epoch));
    rng.shuffle(idx.data(), idx.size());
  }
  return idx;
}

void flip_horizontal(float* img, int64_t c, int64_t h, int64_t w) {
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t r = 0; r < h; ++r) {
      float* row = img + (ch * h + r) * w;
      std::reverse(row, row + w);
    }
}

std::vector<float> pad_crop(const float* img, int64_t c, int64_t h, int64_t w,
                            int pad, int dy, int dx) {
  std::vector<float> out(static_cast<size_t>(c * h * w), 0.0f);
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t r = 0; r < h; ++r) {
      const int64_t src_r = r + dy - pad;
      if (src_r < 0 || src_r >= h) continue;
      for (int64_t col = 0; col < w; ++col) {
        const int64_t src_c = col + dx - pad;
        if (src_c < 0 || src_c >= w) continue;
        out[static_cast<size_t>((ch * h + r) * w + col)] =
            img[(ch * h + src_r) * w + src_c];
      }
    }
  return out;
}

Batch make_batch(const Dataset& data, std::span<const int64_t> indices,
                 Rng* aug_rng) {
  const int64_t per = data.sample_numel();
  const int64_t b = static_cast<int64_t>(indices.size());
  Shape shape;
  shape.push_back(b);
  for (int64_t d : data.sample_shape) shape.push_back(d);

  Tensor x = Tensor::zeros(shape);
  Batch out;
  out.labels.resize(static_cast<size_t>(b));
  const bool image = data.sample_shape.size() == 3;
  const AugmentPolicy& pol = data.augment;

  for (int64_t i = 0; i < b; ++i) {
    const float* src = data.sample(indices[static_cast<size_t>(i)]);
    float* dst = x.data().data() + i * per;
    out.labels[static_cast<size_t>(i)] = data.labels[static_cast<size_t>(indices[static_cast<size_t>(i)])];

    if (image && aug_rng && pol.kind == AugmentPolicy::Kind::kFlipCrop) {
      const int64_t c = data.sample_shape[0], h = data.sample_shape[1],
                    w = data.sample_shape[2];
      const int dy = static_cast<int>(aug_rng->uniform_int(2 * pol.pad + 1));
      const int dx = static_cast<int>(aug_rng->uniform_int(2 * pol.pad + 1));
      std::vector<float> img = pad_crop(src, c, h, w, pol.pad, dy, dx);
      if (aug_rng->bernoulli(0.5)) flip_horizontal(img.data(), c, h, w);
      std::copy(img.begin(), img.end(), dst);
    } else {
      std::copy_n(src, per, dst);
    }

    if (!pol.mean.empty()) {
      if (image) {
        const int64_t c = data.sample_shape[0];
        const int64_t hw = per / c;
        for (int64_t ch = 0; ch < c; ++ch) {
          const float m = pol.mean[static_cast<size_t>(ch)];
          const float s = pol.stddev[static_cast<size_t>(ch)];
          for (int64_t k = 0; k < hw; ++k)
            dst[ch * hw + k] = (dst[ch * hw + k] - m) / s;
        }
      } else {
        const float m = pol.mean[0], s = pol.stddev[0];
        for (int64_t k = 0; k < per; ++k) dst[k] = (dst[k] - m) / s;
      }
    }
  }
  out.x = x;
  return out;
}

}  // namespace st3
