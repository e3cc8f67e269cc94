#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "st3/common.hpp"

namespace st3 {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorData {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // allocated lazily, same length as data
  bool requires_grad = false;
  int node_id = -1;  // index of the producing tape node, -1 for leaves
};

// Value-semantics handle to a dense f32 buffer plus its gradient. Copies
// share storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, float value, bool requires_grad = false);
  static Tensor from(const Shape& shape, std::vector<float> values,
                     bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  int64_t numel() const { return static_cast<int64_t>(d_->data.size()); }
  int64_t dim(size_t i) const { return d_->shape[i]; }
  size_t ndim() const { return d_->shape.size(); }

  std::vector<float>& data() { return d_->data; }
  const std::vector<float>& data() const { return d_->data; }
  float item() const;

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool rg) { d_->requires_grad = rg; }

  bool has_grad() const { return !d_->grad.empty(); }
  // Zero-filled on first access.
  std::vector<float>& grad();
  const std::vector<float>& grad() const;
  void zero_grad();

  int node_id() const { return d_->node_id; }
  void set_node_id(int id) { d_->node_id = id; }

  Tensor clone() const;
  bool same_storage(const Tensor& other) const { return d_ == other.d_; }

  TensorData* raw() { return d_.get(); }
  const TensorData* raw() const { return d_.get(); }

 private:
  std::shared_ptr<TensorData> d_;
};

// Ordered record of executed ops. Nodes are appended in execution order,
// so inputs always precede their consumers; backward() walks the list in
// reverse exactly once.
class Tape {
 public:
  int emit(const char* op, std::function<void()> backward_fn);
  void backward(const Tensor& loss);
  size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }
  const char* op_name(int node_id) const { return nodes_[node_id].op; }

 private:
  struct Node {
    const char* op;
    std::function<void()> backward;
  };
  std::vector<Node> nodes_;
};

// Throws kNonFinite naming `op` if any value is NaN/Inf.
void check_finite(const Tensor& t, const char* op);

// --- ops ---------------------------------------------------------------
// Forward runs eagerly; when an input requires grad, a backward closure is
// recorded on the tape and the output requires grad as well.

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);

Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& w, int stride, int pad);

Tensor relu(Tape& tape, const Tensor& x);
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul_scalar(Tape& tape, const Tensor& x, float s);
// x: [B, N] plus bias [N], broadcast over rows.
Tensor add_row_bias(Tape& tape, const Tensor& x, const Tensor& bias);
// x: [B, C, H, W] plus bias [C], broadcast over batch and space.
Tensor add_channel_bias(Tape& tape, const Tensor& x, const Tensor& bias);
Tensor flatten(Tape& tape, const Tensor& x);
Tensor transpose2d(Tape& tape, const Tensor& x);
Tensor avg_pool2d(Tape& tape, const Tensor& x, int k, int stride);
Tensor sum(Tape& tape, const Tensor& x);

struct BatchNormState {
  std::vector<float> running_mean;
  std::vector<float> running_var;
};

// Training mode normalizes with batch statistics and updates the running
// moments; eval mode uses the running moments only. gamma/beta are [C].
Tensor batch_norm2d(Tape& tape, const Tensor& x, const Tensor& gamma,
                    const Tensor& beta, BatchNormState& state, bool training,
                    float momentum = 0.1f, float eps = 1e-5f);

// Mean cross-entropy over the batch; logits [B, C], labels in [0, C).
Tensor softmax_cross_entropy(Tape& tape, const Tensor& logits,
                             const std::vector<int32_t>& labels);

// Forward returns forward_value as a constant; backward copies the output
// gradient into raw.grad unchanged (identity Jacobian). forward_value's
// construction is never differentiated through.
Tensor straight_through(Tape& tape, const Tensor& raw, const Tensor& forward_value);

std::vector<int32_t> argmax_rows(const Tensor& logits);

}  // namespace st3
