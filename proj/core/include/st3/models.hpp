#pragma once

#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "st3/sparsify.hpp"
#include "st3/tensor.hpp"

namespace st3 {

using WeightMap = std::map<std::string, Tensor>;

struct NamedParam {
  std::string name;
  Tensor tensor;
};

// A network with an explicit parameter registry. Every conv/linear weight
// is registered exactly once as a PrunableParam; biases and normalization
// parameters live in extras() and are never thresholded.
class Model {
 public:
  virtual ~Model() = default;

  // `weights` maps prunable layer names to their sparse forward tensors;
  // names not present fall back to the raw dense weight.
  virtual Tensor forward(Tape& tape, const Tensor& x, const WeightMap& weights,
                         bool training) = 0;
  virtual std::string arch() const = 0;

  std::vector<PrunableParam>& prunable() { return prunable_; }
  const std::vector<PrunableParam>& prunable() const { return prunable_; }
  std::vector<NamedParam>& extras() { return extras_; }

  // Non-trainable state (batch-norm running moments), for checkpoints.
  std::vector<std::pair<std::string, std::vector<float>*>> buffers();

  // All trainable tensors in registry order: prunable raws, then extras.
  std::vector<Tensor> trainable();
  std::vector<std::string> trainable_names() const;

  int64_t param_count() const;
  int64_t dense_macs() const;
  int64_t extra_flops() const { return extra_flops_; }
  const Shape& input_shape() const { return input_shape_; }
  int64_t classes() const { return classes_; }

 protected:
  const Tensor& pick(const WeightMap& weights, const std::string& name,
                     const Tensor& raw) const;
  // Registers a He-initialized weight plus zero bias; returns the index of
  // the new PrunableParam.
  size_t add_linear(const std::string& name, int64_t in, int64_t out,
                    uint64_t seed);
  size_t add_conv(const std::string& name, int64_t cin, int64_t cout, int64_t k,
                  uint64_t seed, int64_t hout, int64_t wout);
  Tensor& bias_of(const std::string& layer_name);

  std::vector<PrunableParam> prunable_;
  std::vector<NamedParam> extras_;
  std::vector<std::pair<std::string, BatchNormState*>> bn_registry_;
  Shape input_shape_;
  int64_t classes_ = 0;
  int64_t extra_flops_ = 0;
  size_t init_counter_ = 0;
};

std::unique_ptr<Model> build_mlp(int64_t in_dim,
                                 const std::vector<int64_t>& hidden_dims,
                                 int64_t classes, uint64_t seed);

// Input 1x28x28.
std::unique_ptr<Model> build_lenet(int64_t classes, uint64_t seed);

// Input 3x32x32; depth = 6n+2 with three stages of n residual blocks at
// widths {w, 2w, 4w}, 1x1 projections on the striding blocks.
std::unique_ptr<Model> build_mini_resnet(int depth, int width, int64_t classes,
                                         uint64_t seed);

}  // namespace st3
