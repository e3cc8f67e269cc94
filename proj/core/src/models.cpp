#include "st3/models.hpp"

#include <cmath>

#include "st3/rng.hpp"

namespace st3 {

std::vector<std::pair<std::string, std::vector<float>*>> Model::buffers() {
  std::vector<std::pair<std::string, std::vector<float>*>> out;
  for (auto& [name, state] : bn_registry_) {
    out.emplace_back(name + ".running_mean", &state->running_mean);
    out.emplace_back(name + ".running_var", &state->running_var);
  }
  return out;
}

std::vector<Tensor> Model::trainable() {
  std::vector<Tensor> out;
  out.reserve(prunable_.size() + extras_.size());
  for (auto& p : prunable_) out.push_back(p.raw);
  for (auto& e : extras_) out.push_back(e.tensor);
  return out;
}

std::vector<std::string> Model::trainable_names() const {
  std::vector<std::string> out;
  out.reserve(prunable_.size() + extras_.size());
  for (const auto& p : prunable_) out.push_back(p.layer_name);
  for (const auto& e : extras_) out.push_back(e.name);
  return out;
}

int64_t Model::param_count() const {
  int64_t n = 0;
  for (const auto& p : prunable_) n += p.raw.numel();
  for (const auto& e : extras_) n += e.tensor.numel();
  return n;
}

int64_t Model::dense_macs() const {
  int64_t n = 0;
  for (const auto& p : prunable_) n += p.mac_dense;
  return n;
}

const Tensor& Model::pick(const WeightMap& weights, const std::string& name,
                          const Tensor& raw) const {
  auto it = weights.find(name);
  return it == weights.end() ? raw : it->second;
}

namespace {

Tensor he_normal(const Shape& shape, int64_t fan_in, Rng& rng) {
  Tensor t = Tensor::zeros(shape, /*requires_grad=*/true);
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (float& v : t.data()) v = static_cast<float>(rng.normal(0.0, stddev));
  return t;
}

// x: [B, in], w: [out, in] -> x W^T + b
Tensor linear_fwd(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_row_bias(tape, matmul(tape, x, transpose2d(tape, w)), b);
}

class MlpModel final : public Model {
 public:
  MlpModel(int64_t in_dim, const std::vector<int64_t>& hidden, int64_t classes,
           uint64_t seed) {
    input_shape_ = {in_dim};
    classes_ = classes;
    std::vector<int64_t> dims;
    dims.push_back(in_dim);
    for (int64_t h : hidden) dims.push_back(h);
    dims.push_back(classes);
    for (size_t i = 0; i + 1 < dims.size(); ++i) {
      names_.push_back("fc" + std::to_string(i + 1));
      add_linear(names_.back(), dims[i], dims[i + 1], seed);
      if (i + 2 < dims.size()) extra_flops_ += dims[i + 1];  // relu
    }
  }

  Tensor forward(Tape& tape, const Tensor& x, const WeightMap& weights,
                 bool /*training*/) override {
    Tensor h = x.ndim() == 2 ? x : flatten(tape, x);
    for (size_t i = 0; i < names_.size(); ++i) {
      const PrunableParam& p = prunable_[i];
      h = linear_fwd(tape, h, pick(weights, p.layer_name, p.raw),
                     bias_of(names_[i] + ".bias"));
      if (i + 1 < names_.size()) h = relu(tape, h);
    }
    return h;
  }

  std::string arch() const override { return "mlp"; }

 private:
  std::vector<std::string> names_;
};

class LenetModel final : public Model {
 public:
  LenetModel(int64_t classes, uint64_t seed) {
    input_shape_ = {1, 28, 28};
    classes_ = classes;
    add_conv("conv1", 1, 6, 5, seed, 24, 24);
    extras_.push_back({"conv1.bias", Tensor::zeros({6}, true)});
    add_conv("conv2", 6, 16, 5, seed, 8, 8);
    extras_.push_back({"conv2.bias", Tensor::zeros({16}, true)});
    add_linear("fc1", 16 * 4 * 4, 120, seed);
    add_linear("fc2", 120, 84, seed);
    add_linear("fc3", 84, classes, seed);
    // relu and pooling elementwise costs, per sample
    extra_flops_ += 6 * 24 * 24 + 6 * 12 * 12 * 5;  // relu1 + pool1
    extra_flops_ += 16 * 8 * 8 + 16 * 4 * 4 * 5;    // relu2 + pool2
    extra_flops_ += 120 + 84;                       // fc relus
  }

  Tensor forward(Tape& tape, const Tensor& x, const WeightMap& weights,
                 bool /*training*/) override {
    Tensor h =
        conv2d(tape, x, pick(weights, "conv1.weight", prunable_[0].raw), 1, 0);
    h = add_channel_bias(tape, h, bias_of("conv1.bias"));
    h = relu(tape, h);
    h = avg_pool2d(tape, h, 2, 2);
    h = conv2d(tape, h, pick(weights, "conv2.weight", prunable_[1].raw), 1, 0);
    h = add_channel_bias(tape, h, bias_of("conv2.bias"));
    h = relu(tape, h);
    h = avg_pool2d(tape, h, 2, 2);
    h = flatten(tape, h);
    h = linear_fwd(tape, h, pick(weights, "fc1.weight", prunable_[2].raw),
                   bias_of("fc1.bias"));
    h = relu(tape, h);
    h = linear_fwd(tape, h, pick(weights, "fc2.weight", prunable_[3].raw),
                   bias_of("fc2.bias"));
    h = relu(tape, h);
    h = linear_fwd(tape, h, pick(weights, "fc3.weight", prunable_[4].raw),
                   bias_of("fc3.bias"));
    return h;
  }

  std::string arch() const override { return "lenet"; }
};

struct ResBlock {
  size_t conv1 = 0, conv2 = 0;
  size_t proj = 0;
  bool has_proj = false;
  int stride = 1;
  std::unique_ptr<BatchNormState> bn1, bn2, bnp;
  std::string name;
};

class MiniResnetModel final : public Model {
 public:
  MiniResnetModel(int depth, int width, int64_t classes, uint64_t seed) {
    if ((depth - 2) % 6 != 0 || depth < 8)
      fail(ErrorKind::kInvalidArgument,
           "mini_resnet depth must be 6n+2 with n >= 1");
    const int n = (depth - 2) / 6;
    input_shape_ = {3, 32, 32};
    classes_ = classes;

    conv0_ = add_conv("conv0", 3, width, 3, seed, 32, 32);
    bn0_ = make_bn("bn0", width);

    int64_t cin = width;
    int64_t res = 32;
    const int64_t widths[3] = {width, 2 * width, 4 * width};
    for (int s = 0; s < 3; ++s) {
      for (int b = 0; b < n; ++b) {
        ResBlock blk;
        blk.name = "stage" + std::to_string(s + 1) + ".block" + std::to_string(b + 1);
        blk.stride = (s > 0 && b == 0) ? 2 : 1;
        const int64_t cout = widths[s];
        const int64_t out_res = res / blk.stride;
        blk.conv1 = add_conv(blk.name + ".conv1", cin, cout, 3, seed, out_res, out_res);
        blk.bn1 = make_bn_state(blk.name + ".bn1", cout);
        blk.conv2 = add_conv(blk.name + ".conv2", cout, cout, 3, seed, out_res, out_res);
        blk.bn2 = make_bn_state(blk.name + ".bn2", cout);
        blk.has_proj = (blk.stride != 1 || cin != cout);
        if (blk.has_proj) {
          blk.proj = add_conv(blk.name + ".proj", cin, cout, 1, seed, out_res, out_res);
          blk.bnp = make_bn_state(blk.name + ".bnp", cout);
          extra_flops_ += 2 * cout * out_res * out_res;  // proj bn
        }
        // two bns, two relus, one residual add
        extra_flops_ += (2 * 2 + 2 + 1) * cout * out_res * out_res;
        cin = cout;
        res = out_res;
        blocks_.push_back(std::move(blk));
      }
    }
    final_res_ = res;
    final_width_ = cin;
    fc_ = add_linear("fc", cin, classes, seed);
    extra_flops_ += 2 * width * 32 * 32;              // bn0
    extra_flops_ += width * 32 * 32;                  // relu0
    extra_flops_ += cin * (res * res + 1);            // global avg pool
  }

  Tensor forward(Tape& tape, const Tensor& x, const WeightMap& weights,
                 bool training) override {
    Tensor h = conv2d(tape, x, w(weights, conv0_), 1, 1);
    h = batch_norm2d(tape, h, gamma("bn0"), beta("bn0"), *bn0_, training);
    h = relu(tape, h);
    for (auto& blk : blocks_) {
      Tensor identity = h;
      Tensor y = conv2d(tape, h, w(weights, blk.conv1), blk.stride, 1);
      y = batch_norm2d(tape, y, gamma(blk.name + ".bn1"),
                       beta(blk.name + ".bn1"), *blk.bn1, training);
      y = relu(tape, y);
      y = conv2d(tape, y, w(weights, blk.conv2), 1, 1);
      y = batch_norm2d(tape, y, gamma(blk.name + ".bn2"),
                       beta(blk.name + ".bn2"), *blk.bn2, training);
      if (blk.has_proj) {
        identity = conv2d(tape, h, w(weights, blk.proj), blk.stride, 0);
        identity = batch_norm2d(tape, identity, gamma(blk.name + ".bnp"),
                                beta(blk.name + ".bnp"), *blk.bnp, training);
      }
      h = relu(tape, add(tape, y, identity));
    }
    h = avg_pool2d(tape, h, static_cast<int>(final_res_), 1);
    h = flatten(tape, h);
    return linear_fwd(tape, h, w(weights, fc_), bias_of("fc.bias"));
  }

  std::string arch() const override { return "mini_resnet"; }

 private:
  const Tensor& w(const WeightMap& weights, size_t idx) const {
    return pick(weights, prunable_[idx].layer_name, prunable_[idx].raw);
  }
  Tensor& gamma(const std::string& bn) { return bias_of(bn + ".gamma"); }
  Tensor& beta(const std::string& bn) { return bias_of(bn + ".beta"); }

  BatchNormState* make_bn(const std::string& name, int64_t c) {
    bn0_owned_ = make_bn_state(name, c);
    return bn0_owned_.get();
  }

  std::unique_ptr<BatchNormState> make_bn_state(const std::string& name,
                                                int64_t c) {
    auto state = std::make_unique<BatchNormState>();
    state->running_mean.assign(static_cast<size_t>(c), 0.0f);
    state->running_var.assign(static_cast<size_t>(c), 1.0f);
    extras_.push_back({name + ".gamma", Tensor::full({c}, 1.0f, true)});
    extras_.push_back({name + ".beta", Tensor::zeros({c}, true)});
    bn_registry_.emplace_back(name, state.get());
    return state;
  }

  size_t conv0_ = 0, fc_ = 0;
  BatchNormState* bn0_ = nullptr;
  std::unique_ptr<BatchNormState> bn0_owned_;
  std::vector<ResBlock> blocks_;
  int64_t final_res_ = 8;
  int64_t final_width_ = 0;
};

}  // namespace

size_t Model::add_linear(const std::string& name, int64_t in, int64_t out,
                         uint64_t seed) {
  Rng rng = Rng::stream(seed, 17, init_counter_++);
  PrunableParam p;
  p.layer_name = name + ".weight";
  p.raw = he_normal({out, in}, in, rng);
  p.sigma_factor = sigma_factor_for(p.raw.shape());
  p.kind = ParamKind::kLinear;
  p.mac_dense = in * out;
  prunable_.push_back(std::move(p));
  extras_.push_back({name + ".bias", Tensor::zeros({out}, true)});
  return prunable_.size() - 1;
}

size_t Model::add_conv(const std::string& name, int64_t cin, int64_t cout,
                       int64_t k, uint64_t seed, int64_t hout, int64_t wout) {
  Rng rng = Rng::stream(seed, 17, init_counter_++);
  PrunableParam p;
  p.layer_name = name + ".weight";
  p.raw = he_normal({cout, cin, k, k}, cin * k * k, rng);
  p.sigma_factor = sigma_factor_for(p.raw.shape());
  p.kind = ParamKind::kConv;
  p.mac_dense = hout * wout * cout * cin * k * k;
  prunable_.push_back(std::move(p));
  return prunable_.size() - 1;
}

Tensor& Model::bias_of(const std::string& layer_name) {
  for (auto& e : extras_)
    if (e.name == layer_name) return e.tensor;
  fail(ErrorKind::kInvalidArgument, "unknown parameter: " + layer_name);
}

std::unique_ptr<Model> build_mlp(int64_t in_dim,
                                 const std::vector<int64_t>& hidden_dims,
                                 int64_t classes, uint64_t seed) {
  if (in_dim <= 0 || classes <= 0)
    fail(ErrorKind::kInvalidArgument, "build_mlp: bad dimensions");
  return std::make_unique<MlpModel>(in_dim, hidden_dims, classes, seed);
}

std::unique_ptr<Model> build_lenet(int64_t classes, uint64_t seed) {
  if (classes <= 0)
    fail(ErrorKind::kInvalidArgument, "build_lenet: bad classes");
  return std::make_unique<LenetModel>(classes, seed);
}

std::unique_ptr<Model> build_mini_resnet(int depth, int width, int64_t classes,
                                         uint64_t seed) {
  if (classes <= 0 || width < 1)
    fail(ErrorKind::kInvalidArgument, "build_mini_resnet: bad arguments");
  return std::make_unique<MiniResnetModel>(depth, width, classes, seed);
}

}  // namespace st3
