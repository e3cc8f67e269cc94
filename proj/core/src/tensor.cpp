#include "st3/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace st3 {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return full(shape, 0.0f, requires_grad);
}

Tensor Tensor::full(const Shape& shape, float value, bool requires_grad) {
  Tensor t;
  t.d_ = std::make_shared<TensorData>();
  t.d_->shape = shape;
  t.d_->data.assign(static_cast<size_t>(shape_numel(shape)), value);
  t.d_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::from(const Shape& shape, std::vector<float> values,
                    bool requires_grad) {
  if (shape_numel(shape) != static_cast<int64_t>(values.size()))
    fail(ErrorKind::kShapeMismatch,
         "tensor init: " + shape_str(shape) + " does not hold " +
             std::to_string(values.size()) + " values");
  Tensor t;
  t.d_ = std::make_shared<TensorData>();
  t.d_->shape = shape;
  t.d_->data = std::move(values);
  t.d_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

float Tensor::item() const {
  if (numel() != 1)
    fail(ErrorKind::kInvalidArgument,
         "item() on tensor of shape " + shape_str(shape()));
  return d_->data[0];
}

std::vector<float>& Tensor::grad() {
  if (d_->grad.empty()) d_->grad.assign(d_->data.size(), 0.0f);
  return d_->grad;
}

const std::vector<float>& Tensor::grad() const {
  if (d_->grad.empty()) d_->grad.assign(d_->data.size(), 0.0f);
  return d_->grad;
}

void Tensor::zero_grad() {
  if (!d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), 0.0f);
}

Tensor Tensor::clone() const {
  Tensor t;
  t.d_ = std::make_shared<TensorData>(*d_);
  return t;
}

int Tape::emit(const char* op, std::function<void()> backward_fn) {
  nodes_.push_back(Node{op, std::move(backward_fn)});
  return static_cast<int>(nodes_.size()) - 1;
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1)
    fail(ErrorKind::kInvalidArgument, "backward() needs a scalar loss");
  const_cast<Tensor&>(loss).grad()[0] = 1.0f;
  for (size_t i = nodes_.size(); i-- > 0;) {
    if (nodes_[i].backward) nodes_[i].backward();
  }
}

void check_finite(const Tensor& t, const char* op) {
  for (float v : t.data()) {
    if (!std::isfinite(v))
      fail(ErrorKind::kNonFinite,
           std::string(op) + " produced a non-finite value");
  }
}

namespace {

bool same_shape(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape();
}

// Output of an op: requires grad iff any input does.
Tensor make_output(const Shape& shape, bool requires_grad) {
  Tensor out = Tensor::zeros(shape, requires_grad);
  return out;
}

}  // namespace

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2)
    fail(ErrorKind::kShapeMismatch, "matmul expects 2-d tensors, got " +
                                        shape_str(a.shape()) + " and " +
                                        shape_str(b.shape()));
  const int64_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    fail(ErrorKind::kShapeMismatch, "matmul inner dims disagree: " +
                                        shape_str(a.shape()) + " x " +
                                        shape_str(b.shape()));
  Tensor out = make_output({m, n}, a.requires_grad() || b.requires_grad());
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  float* pc = out.data().data();
  for (int64_t i = 0; i < m; ++i) {
    float* crow = pc + i * n;
    for (int64_t kk = 0; kk < k; ++kk) {
      const float aik = pa[i * k + kk];
      const float* brow = pb + kk * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
  check_finite(out, "matmul");
  if (out.requires_grad()) {
    Tensor ta = a, tb = b, tc = out;
    int id = tape.emit("matmul", [ta, tb, tc, m, k, n]() mutable {
      const float* gc = tc.grad().data();
      const float* pa2 = ta.data().data();
      const float* pb2 = tb.data().data();
      if (ta.requires_grad()) {
        float* ga = ta.grad().data();
        // dA[i,k] = dot(dC row i, B row k)
        for (int64_t i = 0; i < m; ++i) {
          for (int64_t kk = 0; kk < k; ++kk) {
            float acc = 0.0f;
            const float* crow = gc + i * n;
            const float* brow = pb2 + kk * n;
            for (int64_t j = 0; j < n; ++j) acc += crow[j] * brow[j];
            ga[i * k + kk] += acc;
          }
        }
      }
      if (tb.requires_grad()) {
        float* gb = tb.grad().data();
        // dB[k,n] += A[m,k] * dC[m,n]
        for (int64_t i = 0; i < m; ++i) {
          for (int64_t kk = 0; kk < k; ++kk) {
            const float aik = pa2[i * k + kk];
            const float* crow = gc + i * n;
            float* brow = gb + kk * n;
            for (int64_t j = 0; j < n; ++j) brow[j] += aik * crow[j];
          }
        }
      }
    });
    out.set_node_id(id);
  }
  return out;
}

Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& w, int stride, int pad) {
  if (x.ndim() != 4 || w.ndim() != 4)
    fail(ErrorKind::kShapeMismatch, "conv2d expects 4-d tensors, got " +
                                        shape_str(x.shape()) + " and " +
                                        shape_str(w.shape()));
  const int64_t bsz = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int64_t cout = w.dim(0), cin2 = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  if (cin != cin2)
    fail(ErrorKind::kShapeMismatch, "conv2d channel mismatch: input " +
                                        shape_str(x.shape()) + " kernel " +
                                        shape_str(w.shape()));
  if (stride < 1 || pad < 0)
    fail(ErrorKind::kInvalidArgument, "conv2d: bad stride/pad");
  if (kh > h + 2 * pad || kw > wd + 2 * pad)
    fail(ErrorKind::kShapeMismatch, "conv2d kernel larger than padded input");
  const int64_t hout = (h + 2 * pad - kh) / stride + 1;
  const int64_t wout = (wd + 2 * pad - kw) / stride + 1;
  if (hout <= 0 || wout <= 0)
    fail(ErrorKind::kShapeMismatch, "conv2d: non-positive output dims");

  Tensor out = make_output({bsz, cout, hout, wout},
                           x.requires_grad() || w.requires_grad());
  const float* px = x.data().data();
  const float* pw = w.data().data();
  float* po = out.data().data();
  for (int64_t b = 0; b < bsz; ++b) {
    for (int64_t co = 0; co < cout; ++co) {
      for (int64_t ho = 0; ho < hout; ++ho) {
        for (int64_t wo = 0; wo < wout; ++wo) {
          float acc = 0.0f;
          for (int64_t ci = 0; ci < cin; ++ci) {
            const float* xc = px + ((b * cin + ci) * h) * wd;
            const float* wc = pw + ((co * cin + ci) * kh) * kw;
            for (int64_t r = 0; r < kh; ++r) {
              const int64_t hi = ho * stride - pad + r;
              if (hi < 0 || hi >= h) continue;
              for (int64_t c = 0; c < kw; ++c) {
                const int64_t wi = wo * stride - pad + c;
                if (wi < 0 || wi >= wd) continue;
                acc += xc[hi * wd + wi] * wc[r * kw + c];
              }
            }
          }
          po[((b * cout + co) * hout + ho) * wout + wo] = acc;
        }
      }
    }
  }
  check_finite(out, "conv2d");
  if (out.requires_grad()) {
    Tensor tx = x, tw = w, to = out;
    int id = tape.emit("conv2d", [tx, tw, to, stride, pad, bsz, cin, h, wd,
                                  cout, kh, kw, hout, wout]() mutable {
      const float* go = to.grad().data();
      const float* px2 = tx.data().data();
      const float* pw2 = tw.data().data();
      float* gx = tx.requires_grad() ? tx.grad().data() : nullptr;
      float* gw = tw.requires_grad() ? tw.grad().data() : nullptr;
      for (int64_t b = 0; b < bsz; ++b) {
        for (int64_t co = 0; co < cout; ++co) {
          for (int64_t ho = 0; ho < hout; ++ho) {
            for (int64_t wo = 0; wo < wout; ++wo) {
              const float g = go[((b * cout + co) * hout + ho) * wout + wo];
              if (g == 0.0f) continue;
              for (int64_t ci = 0; ci < cin; ++ci) {
                const int64_t xbase = ((b * cin + ci) * h) * wd;
                const int64_t wbase = ((co * cin + ci) * kh) * kw;
                for (int64_t r = 0; r < kh; ++r) {
                  const int64_t hi = ho * stride - pad + r;
                  if (hi < 0 || hi >= h) continue;
                  for (int64_t c = 0; c < kw; ++c) {
                    const int64_t wi = wo * stride - pad + c;
                    if (wi < 0 || wi >= wd) continue;
                    if (gx) gx[xbase + hi * wd + wi] += g * pw2[wbase + r * kw + c];
                    if (gw) gw[wbase + r * kw + c] += g * px2[xbase + hi * wd + wi];
                  }
                }
              }
            }
          }
        }
      }
    });
    out.set_node_id(id);
  }
  return out;
}

Tensor relu(Tape& tape, const Tensor& x) {
  Tensor out = make_output(x.shape(), x.requires_grad());
  const float* px = x.data().data();
  float* po = out.data().data();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = px[i] > 0.0f ? px[i] : 0.0f;
  check_finite(out, "relu");
  if (out.requires_grad()) {
    Tensor tx = x, to = out;
    int id = tape.emit("relu", [tx, to, n]() mutable {
      const float* g = to.grad().data();
      const float* px2 = tx.data().data();
      float* gx = tx.grad().data();
      for (int64_t i = 0; i < n; ++i)
        if (px2[i] > 0.0f) gx[i] += g[i];
    });
    out.set_node_id(id);
  }
  return out;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  if (!same_shape(a, b))
    fail(ErrorKind::kShapeMismatch, "add shape mismatch: " +
                                        shape_str(a.shape()) + " vs " +
                                        shape_str(b.shape()));
  Tensor out = make_output(a.shape(), a.requires_grad() || b.requires_grad());
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  float* po = out.data().data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  check_finite(out, "add");
  if (out.requires_grad()) {
    Tensor ta = a, tb = b, to = out;
    int id = tape.emit("add", [ta, tb, to, n]() mutable {
      const float* g = to.grad().data();
      if (ta.requires_grad()) {
        float* ga = ta.grad().data();
        for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (tb.requires_grad()) {
        float* gb = tb.grad().data();
        for (int64_t i = 0; i < n; ++i) gb[i] += g[i];
      }
    });
    out.set_node_id(id);
  }
  return out;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (!same_shape(a, b))
    fail(ErrorKind::kShapeMismatch, "mul shape mismatch: " +
                                        shape_str(a.shape()) + " vs " +
                                        shape_str(b.shape()));
  Tensor out = make_output(a.shape(), a.requires_grad() || b.requires_grad());
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  float* po = out.data().data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  check_finite(out, "mul");
  if (out.requires_grad()) {
    Tensor ta = a, tb = b, to = out;
    int id = tape.emit("mul", [ta, tb, to, n]() mutable {
      const float* g = to.grad().data();
      const float* pa2 = ta.data().data();
      const float* pb2 = tb.data().data();
      if (ta.requires_grad()) {
        float* ga = ta.grad().data();
        for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * pb2[i];
      }
      if (tb.requires_grad()) {
        float* gb = tb.grad().data();
        for (int64_t i = 0; i < n; ++i) gb[i] += g[i] * pa2[i];
      }
    });
    out.set_node_id(id);
  }
  return out;
}

Tensor mul_scalar(Tape& tape, const Tensor& x, float s) {
  Tensor out = make_output(x.shape(), x.requires_grad());
  const float* px = x.data().data();
  float* po = out.data().data();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = px[i] * s;
  check_finite(out, "mul_scalar");
  if (out.requires_grad()) {
    Tensor tx = x, to = out;
    int id = tape.emit("mul_scalar", [tx, to, s, n]() mutable {
      const float* g = to.grad().data();
      float* gx = tx.grad().data();
      for (int64_t i = 0; i < n; ++i) gx[i] += g[i] * s;
    });
    out.set_node_id(id);
  }
  return out;
}

Tensor add_row_bias(Tape& tape, const Tensor& x, const Tensor& bias) {
  if (x.ndim() != 2 || bias.ndim() != 1 || x.dim(1) != bias.dim(0))
    fail(ErrorKind::kShapeMismatch, "add_row_bias: " + shape_str(x.shape()) +
                                        " with bias " + shape_str(bias.shape()));
  const int64_t rows = x.dim(0), cols = x.dim(1);
  Tensor out = make_output(x.shape(), x.requires_grad() || bias.requires_grad());
  const float* px = x.data().data();
  const float* pb = bias.data().data();
  float* po = out.data().data();
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j) po[i * cols + j] = px[i * cols + j] + pb[j];
  check_finite(out, "add_row_bias");
  if (out.requires_grad()) {
    Tensor tx = x, tb = bias, to = out;
    int id = tape.emit("add_row_bias", [tx, tb, to, rows, cols]() mutable {
      const float* g = to.grad().data();
      if (tx.requires_grad()) {
        float* gx = tx.grad().data();
        for (int64_t i = 0; i < rows * cols; ++i) gx[i] += g[i];
      }
      if (tb.requires_grad()) {
        float* gb = tb.grad().data();
        for (int64_t i = 0; i < rows; ++i)
          for (int64_t j = 0; j < cols; ++j) gb[j] += g[i * cols + j];
      }
    });
    out.set_node_id(id);
  }
  return out;
}

Tensor add_channel_bias(Tape& tape, const Tensor& x, const Tensor& bias) {
  if (x.ndim() != 4 || bias.ndim() != 1 || x.dim(1) != bias.dim(0))
    fail(ErrorKind::kShapeMismatch, "add_channel_bias: " +
                                        shape_str(x.shape()) + " with bias " +
                                        shape_str(bias.shape()));
  const int64_t b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out = make_output(x.shape(), x.requires_grad() || bias.requires_grad());
  const float* px = x.data().data();
  const float* pb = bias.data().data();
  float* po = out.data().data();
  for (int64_t i = 0; i < b; ++i)
    for (int64_t ch = 0; ch < c; ++ch) {
      const float bv = pb[ch];
      const int64_t base = (i * c + ch) * hw;
      for (int64_t k = 0; k < hw; ++k) po[base + k] = px[base + k] + bv;
    }
  check_finite(out, "add_channel_bias");
  if (out.requires_grad()) {
    Tensor tx = x, tb = bias, to = out;
    int id = tape.emit("add_channel_bias", [tx, tb, to, b, c, hw]() mutable {
      const float* g = to.grad().data();
      if (tx.requires_grad()) {
        float* gx = tx.grad().data();
        for (int64_t i = 0; i < b * c * hw; ++i) gx[i] += g[i];
      }
      if (tb.requires_grad()) {
        float* gb = tb.grad().data();
        for (int64_t i = 0; i < b; ++i)
          for (int64_t ch = 0; ch < c; ++ch) {
            const int64_t base = (i * c + ch) * hw;
            float acc = 0.0f;
            for (int64_t k = 0; k < hw; ++k) acc += g[base + k];
            gb[ch] += acc;
          }
      }
    });
    out.set_node_id(id);
  }
  return out;
}

Tensor flatten(Tape& tape, const Tensor& x) {
  if (x.ndim() < 1)
    fail(ErrorKind::kShapeMismatch, "flatten needs at least 1 dim");
  const int64_t b = x.dim(0);
  const int64_t rest = x.numel() / b;
  Tensor out = make_output({b, rest}, x.requires_grad());
  out.data() = x.data();
  if (out.requires_grad()) {
    Tensor tx = x, to = out;
    int id = tape.emit("flatten", [tx, to]() mutable {
      const float* g = to.grad().data();
      float* gx = tx.grad().data();
      const int64_t n = tx.numel();
      for (int64_t i = 0; i < n; ++i) gx[i] += g[i];
    });
    out.set_node_id(id);
  }
  return out;
}

Tensor transpose2d(Tape& tape, const Tensor& x) {
  if (x.ndim() != 2)
    fail(ErrorKind::kShapeMismatch, "transpose2d expects a 2-d tensor");
  const int64_t r = x.dim(0), c = x.dim(1);
  Tensor out = make_output({c, r}, x.requires_grad());
  const float* px = x.data().data();
  float* po = out.data().data();
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) po[j * r + i] = px[i * c + j];
  if (out.requires_grad()) {
    Tensor tx = x, to = out;
    int id = tape.emit("transpose2d", [tx, to, r, c]() mutable {
      const float* g = to.grad().data();
      float* gx = tx.grad().data();
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
    });
    out.set_node_id(id);
  }
  return out;
}

Tensor avg_pool2d(Tape& tape, const Tensor& x, int k, int stride) {
  if (x.ndim() != 4)
    fail(ErrorKind::kShapeMismatch, "avg_pool2d expects 4-d input");
  if (k < 1 || stride < 1)
    fail(ErrorKind::kInvalidArgument, "avg_pool2d: bad window/stride");
  const int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t hout = (h - k) / stride + 1;
  const int64_t wout = (w - k) / stride + 1;
  if (hout <= 0 || wout <= 0)
    fail(ErrorKind::kShapeMismatch, "avg_pool2d: non-positive output dims");
  Tensor out = make_output({b, c, hout, wout}, x.requires_grad());
  const float* px = x.data().data();
  float* po = out.data().data();
  const float inv = 1.0f / static_cast<float>(k * k);
  for (int64_t i = 0; i < b * c; ++i) {
    const float* xc = px + i * h * w;
    float* oc = po + i * hout * wout;
    for (int64_t ho = 0; ho < hout; ++ho)
      for (int64_t wo = 0; wo < wout; ++wo) {
        float acc = 0.0f;
        for (int64_t r = 0; r < k; ++r)
          for (int64_t cc = 0; cc < k; ++cc)
            acc += xc[(ho * stride + r) * w + wo * stride + cc];
        oc[ho * wout + wo] = acc * inv;
      }
  }
  check_finite(out, "avg_pool2d");
  if (out.requires_grad()) {
    Tensor tx = x, to = out;
    int id = tape.emit("avg_pool2d", [tx, to, k, stride, b, c, h, w, hout,
                                      wout, inv]() mutable {
      const float* g = to.grad().data();
      float* gx = tx.grad().data();
      for (int64_t i = 0; i < b * c; ++i) {
        float* xc = gx + i * h * w;
        const float* oc = g + i * hout * wout;
        for (int64_t ho = 0; ho < hout; ++ho)
          for (int64_t wo = 0; wo < wout; ++wo) {
            const float gv = oc[ho * wout + wo] * inv;
            for (int64_t r = 0; r < k; ++r)
              for (int64_t cc = 0; cc < k; ++cc)
                xc[(ho * stride + r) * w + wo * stride + cc] += gv;
          }
      }
    });
    out.set_node_id(id);
  }
  return out;
}

Tensor sum(Tape& tape, const Tensor& x) {
  Tensor out = make_output({1}, x.requires_grad());
  float acc = 0.0f;
  for (float v : x.data()) acc += v;
  out.data()[0] = acc;
  check_finite(out, "sum");
  if (out.requires_grad()) {
    Tensor tx = x, to = out;
    int id = tape.emit("sum", [tx, to]() mutable {
      const float g = to.grad()[0];
      float* gx = tx.grad().data();
      const int64_t n = tx.numel();
      for (int64_t i = 0; i < n; ++i) gx[i] += g;
    });
    out.set_node_id(id);
  }
  return out;
}

Tensor batch_norm2d(Tape& tape, const Tensor& x, const Tensor& gamma,
                    const Tensor& beta, BatchNormState& state, bool training,
                    float momentum, float eps) {
  if (x.ndim() != 4)
    fail(ErrorKind::kShapeMismatch, "batch_norm2d expects 4-d input");
  const int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (gamma.numel() != c || beta.numel() != c)
    fail(ErrorKind::kShapeMismatch, "batch_norm2d: gamma/beta must be [C]");
  if (state.running_mean.size() != static_cast<size_t>(c))
    fail(ErrorKind::kShapeMismatch, "batch_norm2d: running stats size mismatch");
  const int64_t hw = h * w;
  const int64_t m = b * hw;  // elements per channel

  Tensor out = make_output(x.shape(), x.requires_grad() ||
                                          gamma.requires_grad() ||
                                          beta.requires_grad());
  const float* px = x.data().data();
  const float* pg = gamma.data().data();
  const float* pbe = beta.data().data();
  float* po = out.data().data();

  std::vector<float> mean(c), inv_std(c);
  if (training) {
    if (m < 2)
      fail(ErrorKind::kInvalidArgument,
           "batch_norm2d training needs >= 2 elements per channel");
    for (int64_t ch = 0; ch < c; ++ch) {
      float s = 0.0f;
      for (int64_t i = 0; i < b; ++i) {
        const float* xc = px + (i * c + ch) * hw;
        for (int64_t k = 0; k < hw; ++k) s += xc[k];
      }
      const float mu = s / static_cast<float>(m);
      float v = 0.0f;
      for (int64_t i = 0; i < b; ++i) {
        const float* xc = px + (i * c + ch) * hw;
        for (int64_t k = 0; k < hw; ++k) {
          const float d = xc[k] - mu;
          v += d * d;
        }
      }
      const float var = v / static_cast<float>(m);
      mean[ch] = mu;
      inv_std[ch] = 1.0f / std::sqrt(var + eps);
      // Running stats track the unbiased variance, torch-style.
      const float var_unbiased = v / static_cast<float>(m - 1);
      state.running_mean[ch] =
          (1.0f - momentum) * state.running_mean[ch] + momentum * mu;
      state.running_var[ch] =
          (1.0f - momentum) * state.running_var[ch] + momentum * var_unbiased;
    }
  } else {
    for (int64_t ch = 0; ch < c; ++ch) {
      mean[ch] = state.running_mean[ch];
      inv_std[ch] = 1.0f / std::sqrt(state.running_var[ch] + eps);
    }
  }

  for (int64_t i = 0; i < b; ++i)
    for (int64_t ch = 0; ch < c; ++ch) {
      const float mu = mean[ch], is = inv_std[ch], ga = pg[ch], be = pbe[ch];
      const float* xc = px + (i * c + ch) * hw;
      float* oc = po + (i * c + ch) * hw;
      for (int64_t k = 0; k < hw; ++k) oc[k] = ga * (xc[k] - mu) * is + be;
    }
  check_finite(out, "batch_norm2d");

  if (out.requires_grad()) {
    Tensor tx = x, tg = gamma, tb = beta, to = out;
    auto mean_c = std::make_shared<std::vector<float>>(std::move(mean));
    auto istd_c = std::make_shared<std::vector<float>>(std::move(inv_std));
    int id = tape.emit("batch_norm2d", [tx, tg, tb, to, mean_c, istd_c, b, c,
                                        hw, m, training]() mutable {
      const float* g = to.grad().data();
      const float* px2 = tx.data().data();
      const float* pg2 = tg.data().data();
      float* gx = tx.requires_grad() ? tx.grad().data() : nullptr;
      float* gg = tg.requires_grad() ? tg.grad().data() : nullptr;
      float* gb = tb.requires_grad() ? tb.grad().data() : nullptr;
      for (int64_t ch = 0; ch < c; ++ch) {
        const float mu = (*mean_c)[ch], is = (*istd_c)[ch];
        float sum_dy = 0.0f, sum_dy_xhat = 0.0f;
        for (int64_t i = 0; i < b; ++i) {
          const float* gc = g + (i * c + ch) * hw;
          const float* xc = px2 + (i * c + ch) * hw;
          for (int64_t k = 0; k < hw; ++k) {
            sum_dy += gc[k];
            sum_dy_xhat += gc[k] * (xc[k] - mu) * is;
          }
        }
        if (gb) gb[ch] += sum_dy;
        if (gg) gg[ch] += sum_dy_xhat;
        if (gx) {
          const float ga = pg2[ch];
          if (training) {
            const float invm = 1.0f / static_cast<float>(m);
            for (int64_t i = 0; i < b; ++i) {
              const float* gc = g + (i * c + ch) * hw;
              const float* xc = px2 + (i * c + ch) * hw;
              float* gxc = gx + (i * c + ch) * hw;
              for (int64_t k = 0; k < hw; ++k) {
                const float xhat = (xc[k] - mu) * is;
                gxc[k] += ga * is *
                          (gc[k] - invm * sum_dy - xhat * invm * sum_dy_xhat);
              }
            }
          } else {
            // Running stats are constants in eval mode.
            for (int64_t i = 0; i < b; ++i) {
              const float* gc = g + (i * c + ch) * hw;
              float* gxc = gx + (i * c + ch) * hw;
              for (int64_t k = 0; k < hw; ++k) gxc[k] += ga * is * gc[k];
            }
          }
        }
      }
    });
    out.set_node_id(id);
  }
  return out;
}

Tensor softmax_cross_entropy(Tape& tape, const Tensor& logits,
                             const std::vector<int32_t>& labels) {
  if (logits.ndim() != 2)
    fail(ErrorKind::kShapeMismatch, "softmax_cross_entropy expects [B, C] logits");
  const int64_t b = logits.dim(0), c = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != b)
    fail(ErrorKind::kShapeMismatch, "softmax_cross_entropy: batch/label count mismatch");
  for (int32_t y : labels)
    if (y < 0 || y >= c)
      fail(ErrorKind::kInvalidArgument,
           "softmax_cross_entropy: label " + std::to_string(y) +
               " outside [0, " + std::to_string(c) + ")");

  Tensor out = make_output({1}, logits.requires_grad());
  const float* pl = logits.data().data();
  // Softmax probabilities are saved for the backward pass.
  auto probs = std::make_shared<std::vector<float>>(static_cast<size_t>(b * c));
  float loss = 0.0f;
  for (int64_t i = 0; i < b; ++i) {
    const float* row = pl + i * c;
    float mx = row[0];
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    float z = 0.0f;
    for (int64_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const float lse = mx + std::log(z);
    loss += lse - row[labels[static_cast<size_t>(i)]];
    float* prow = probs->data() + i * c;
    for (int64_t j = 0; j < c; ++j) prow[j] = std::exp(row[j] - mx) / z;
  }
  out.data()[0] = loss / static_cast<float>(b);
  check_finite(out, "softmax_cross_entropy");
  if (out.requires_grad()) {
    Tensor tl = logits, to = out;
    auto lab = std::make_shared<std::vector<int32_t>>(labels);
    int id = tape.emit("softmax_cross_entropy", [tl, to, probs, lab, b, c]() mutable {
      const float g = to.grad()[0] / static_cast<float>(b);
      float* gl = tl.grad().data();
      const float* pp = probs->data();
      for (int64_t i = 0; i < b; ++i) {
        const int32_t y = (*lab)[static_cast<size_t>(i)];
        for (int64_t j = 0; j < c; ++j) {
          const float onehot = (j == y) ? 1.0f : 0.0f;
          gl[i * c + j] += g * (pp[i * c + j] - onehot);
        }
      }
    });
    out.set_node_id(id);
  }
  return out;
}

Tensor straight_through(Tape& tape, const Tensor& raw, const Tensor& forward_value) {
  if (raw.shape() != forward_value.shape())
    fail(ErrorKind::kShapeMismatch, "straight_through: raw " +
                                        shape_str(raw.shape()) +
                                        " vs forward value " +
                                        shape_str(forward_value.shape()));
  Tensor out = make_output(raw.shape(), raw.requires_grad());
  out.data() = forward_value.data();
  check_finite(out, "straight_through");
  if (out.requires_grad()) {
    Tensor tr = raw, to = out;
    int id = tape.emit("straight_through", [tr, to]() mutable {
      // Identity Jacobian: the raw weight receives the output gradient
      // verbatim. Raw weights feed exactly one straight_through node per
      // tape, so this is a copy, not an accumulation.
      tr.grad() = to.grad();
    });
    out.set_node_id(id);
  }
  return out;
}

std::vector<int32_t> argmax_rows(const Tensor& logits) {
  const int64_t b = logits.dim(0), c = logits.dim(1);
  std::vector<int32_t> out(static_cast<size_t>(b));
  const float* pl = logits.data().data();
  for (int64_t i = 0; i < b; ++i) {
    const float* row = pl + i * c;
    int32_t best = 0;
    for (int64_t j = 1; j < c; ++j)
      if (row[j] > row[best]) best = static_cast<int32_t>(j);
    out[static_cast<size_t>(i)] = best;
  }
  return out;
}

}  // namespace st3
