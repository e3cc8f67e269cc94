#include "st3/sparsify.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace st3 {

const char* threshold_mode_name(ThresholdMode m) {
  return m == ThresholdMode::kSoft ? "soft" : "hard";
}

const char* allocation_name(Allocation a) {
  switch (a) {
    case Allocation::kGlobalL1: return "global_l1";
    case Allocation::kSigma: return "sigma";
    case Allocation::kLamp: return "lamp";
  }
  return "unknown";
}

double sigma_factor_for(const Shape& shape, int filter_axis) {
  if (shape.size() < 2)
    fail(ErrorKind::kInvalidArgument,
         "sigma_factor: prunable weights must have >= 2 dims");
  int64_t n = 1;
  for (size_t i = 0; i < shape.size(); ++i)
    if (static_cast<int>(i) != filter_axis) n *= shape[i];
  return std::sqrt(static_cast<double>(n));
}

std::vector<double> lamp_scores(std::span<const float> w_flat) {
  if (w_flat.empty())
    fail(ErrorKind::kInvalidArgument, "lamp_scores: empty weight vector");
  const size_t n = w_flat.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return std::fabs(static_cast<double>(w_flat[a])) <
           std::fabs(static_cast<double>(w_flat[b]));
  });
  // Suffix sums of squares over the sorted order.
  std::vector<double> suffix(n + 1, 0.0);
  for (size_t u = n; u-- > 0;) {
    const double w = static_cast<double>(w_flat[order[u]]);
    suffix[u] = suffix[u + 1] + w * w;
  }
  std::vector<double> scores(n, 0.0);
  for (size_t u = 0; u < n; ++u) {
    const double w = static_cast<double>(w_flat[order[u]]);
    scores[order[u]] = suffix[u] > 0.0 ? (w * w) / suffix[u] : 0.0;
  }
  return scores;
}

namespace {

// Scores for one parameter under the given allocation, double precision.
void append_scores(const PrunableParam& p, Allocation allocation,
                   std::vector<double>& out) {
  const std::vector<float>& w = p.raw.data();
  switch (allocation) {
    case Allocation::kGlobalL1:
      for (float v : w) out.push_back(std::fabs(static_cast<double>(v)));
      break;
    case Allocation::kSigma:
      for (float v : w)
        out.push_back(std::fabs(static_cast<double>(v)) * p.sigma_factor);
      break;
    case Allocation::kLamp: {
      std::vector<double> s = lamp_scores(std::span<const float>(w));
      out.insert(out.end(), s.begin(), s.end());
      break;
    }
  }
}

}  // namespace

double global_threshold(const std::vector<PrunableParam>& params,
                        double sp_ratio, Allocation allocation) {
  if (params.empty())
    fail(ErrorKind::kInvalidArgument, "global_threshold: no prunable parameters");
  if (!(sp_ratio >= 0.0 && sp_ratio < 1.0))
    fail(ErrorKind::kInvalidArgument,
         "global_threshold: sp_ratio must lie in [0, 1)");
  std::vector<double> scores;
  int64_t total = 0;
  for (const auto& p : params) total += p.raw.numel();
  if (total == 0)
    fail(ErrorKind::kInvalidArgument, "global_threshold: no prunable weights");
  scores.reserve(static_cast<size_t>(total));
  for (const auto& p : params) append_scores(p, allocation, scores);

  const int64_t k = static_cast<int64_t>(
      std::floor(sp_ratio * static_cast<double>(total)));
  if (k <= 0) return 0.0;
  std::nth_element(scores.begin(), scores.begin() + (k - 1), scores.end());
  return scores[static_cast<size_t>(k - 1)];
}

Tensor soft_threshold(const Tensor& w, double th) {
  if (th < 0.0)
    fail(ErrorKind::kInvalidArgument, "soft_threshold: negative threshold");
  Tensor out = Tensor::zeros(w.shape());
  const float* pw = w.data().data();
  float* po = out.data().data();
  const int64_t n = w.numel();
  for (int64_t i = 0; i < n; ++i) {
    const double a = std::fabs(static_cast<double>(pw[i])) - th;
    po[i] = a > 0.0 ? static_cast<float>(std::copysign(a, pw[i])) : 0.0f;
  }
  return out;
}

Tensor hard_threshold(const Tensor& w, double th) {
  if (th < 0.0)
    fail(ErrorKind::kInvalidArgument, "hard_threshold: negative threshold");
  Tensor out = Tensor::zeros(w.shape());
  const float* pw = w.data().data();
  float* po = out.data().data();
  const int64_t n = w.numel();
  for (int64_t i = 0; i < n; ++i)
    po[i] = std::fabs(static_cast<double>(pw[i])) > th ? pw[i] : 0.0f;
  return out;
}

double filter_scale(std::span<const float> w, double th) {
  if (th < 0.0)
    fail(ErrorKind::kInvalidArgument, "filter_scale: negative threshold");
  double num = 0.0, den = 0.0;
  for (float v : w) {
    const double a = std::fabs(static_cast<double>(v));
    if (!std::isfinite(a))
      fail(ErrorKind::kNonFinite, "filter_scale: non-finite weight");
    num += a;
    if (a > th) den += a;
  }
  if (den == 0.0) return 1.0;  // dead filter: any finite scale is a no-op
  return num / den;
}

namespace {

struct LayerDecision {
  std::vector<uint8_t> zero;  // 1 = zeroed
  double mth = 0.0;           // per-layer shrink threshold
};

LayerDecision decide_layer(const PrunableParam& p, double th,
                           Allocation allocation) {
  const std::vector<float>& w = p.raw.data();
  const size_t n = w.size();
  LayerDecision d;
  d.zero.assign(n, 0);
  switch (allocation) {
    case Allocation::kGlobalL1:
      d.mth = th;
      for (size_t i = 0; i < n; ++i)
        d.zero[i] = std::fabs(static_cast<double>(w[i])) <= th ? 1 : 0;
      break;
    case Allocation::kSigma:
      d.mth = th / p.sigma_factor;
      for (size_t i = 0; i < n; ++i)
        d.zero[i] =
            std::fabs(static_cast<double>(w[i])) * p.sigma_factor <= th ? 1 : 0;
      break;
    case Allocation::kLamp: {
      std::vector<double> s = lamp_scores(std::span<const float>(w));
      double mth = 0.0;
      for (size_t i = 0; i < n; ++i) {
        if (s[i] <= th) {
          d.zero[i] = 1;
          mth = std::max(mth, std::fabs(static_cast<double>(w[i])));
        }
      }
      // The largest zeroed magnitude acts as the layer's shrink amount;
      // survivors tied with it in magnitude are zeroed by the formula too.
      d.mth = mth;
      for (size_t i = 0; i < n; ++i)
        if (std::fabs(static_cast<double>(w[i])) <= mth) d.zero[i] = 1;
      break;
    }
  }
  return d;
}

}  // namespace

SparseSet compute_sparse_values(const std::vector<PrunableParam>& params,
                                double sp_ratio, const SparsifyConfig& config) {
  SparseSet set;
  set.threshold = global_threshold(params, sp_ratio, config.allocation);

  for (const auto& p : params) {
    const std::vector<float>& w = p.raw.data();
    const size_t n = w.size();
    LayerDecision dec = decide_layer(p, set.threshold, config.allocation);

    SparseLayer layer;
    layer.effective_th = dec.mth;
    layer.value = Tensor::zeros(p.raw.shape());
    float* out = layer.value.data().data();

    const bool soft = config.threshold_mode == ThresholdMode::kSoft;
    for (size_t i = 0; i < n; ++i) {
      if (dec.zero[i]) continue;
      if (soft) {
        const double a = std::fabs(static_cast<double>(w[i])) - dec.mth;
        out[i] = a > 0.0 ? static_cast<float>(std::copysign(a, w[i])) : 0.0f;
      } else {
        out[i] = w[i];
      }
    }

    if (config.rescale) {
      // One scale per output filter; zeros are unaffected (0 * s = 0).
      const int64_t filters = p.raw.shape()[static_cast<size_t>(p.filter_axis)];
      const int64_t per_filter = p.raw.numel() / filters;
      for (int64_t j = 0; j < filters; ++j) {
        double num = 0.0, den = 0.0;
        const int64_t base = j * per_filter;
        for (int64_t i = 0; i < per_filter; ++i) {
          const double a = std::fabs(static_cast<double>(w[base + i]));
          num += a;
          if (!dec.zero[base + i]) den += a;
        }
        const double scale = den > 0.0 ? num / den : 1.0;
        if (scale != 1.0)
          for (int64_t i = 0; i < per_filter; ++i)
            out[base + i] = static_cast<float>(
                static_cast<double>(out[base + i]) * scale);
      }
    }

    for (size_t i = 0; i < n; ++i)
      if (out[i] == 0.0f) ++layer.zero_count;
    set.total_weights += static_cast<int64_t>(n);
    set.total_zeros += layer.zero_count;
    set.layers.emplace(p.layer_name, std::move(layer));
  }
  return set;
}

std::map<std::string, Tensor> make_sparse_weights(
    Tape& tape, const std::vector<PrunableParam>& params, double sp_ratio,
    const SparsifyConfig& config) {
  SparseSet set = compute_sparse_values(params, sp_ratio, config);
  std::map<std::string, Tensor> out;
  for (const auto& p : params) {
    const SparseLayer& layer = set.layers.at(p.layer_name);
    out.emplace(p.layer_name, straight_through(tape, p.raw, layer.value));
  }
  return out;
}

std::vector<uint8_t> zero_mask(const Tensor& sparse_w) {
  const std::vector<float>& d = sparse_w.data();
  std::vector<uint8_t> mask(d.size());
  for (size_t i = 0; i < d.size(); ++i) mask[i] = (d[i] == 0.0f) ? 1 : 0;
  return mask;
}

}  // namespace st3
