#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "st3/tensor.hpp"

namespace st3 {

enum class ThresholdMode { kSoft, kHard };
enum class Allocation { kGlobalL1, kSigma, kLamp };

const char* threshold_mode_name(ThresholdMode m);
const char* allocation_name(Allocation a);

struct SparsifyConfig {
  ThresholdMode threshold_mode = ThresholdMode::kSoft;
  bool rescale = true;
  Allocation allocation = Allocation::kGlobalL1;
};

enum class ParamKind { kConv, kLinear };

// A layer's dense trained weight. The raw tensor is the only stored
// weight; sparse forward weights are derived from it every step.
struct PrunableParam {
  std::string layer_name;
  Tensor raw;
  double sigma_factor = 1.0;  // sqrt(weights per output filter)
  int filter_axis = 0;
  ParamKind kind = ParamKind::kLinear;
  int64_t mac_dense = 0;  // per-inference multiply-adds, filled by the model
};

// sqrt of the product of all dims except the output-filter dim.
double sigma_factor_for(const Shape& shape, int filter_axis = 0);

// Layer-adaptive scores: sort by magnitude ascending, score(u) =
// w_u^2 / sum_{v>=u} w_v^2, mapped back to original positions. All-zero
// input yields all-zero scores.
std::vector<double> lamp_scores(std::span<const float> w_flat);

// k-th smallest aggregated score with k = floor(sp_ratio * N); 0 when
// k = 0. Downstream zeroes exactly the weights with score <= th.
double global_threshold(const std::vector<PrunableParam>& params,
                        double sp_ratio, Allocation allocation);

// sign(w) * max(|w| - th, 0), elementwise. Result is a constant leaf.
Tensor soft_threshold(const Tensor& w, double th);
// w where |w| > th, else 0.
Tensor hard_threshold(const Tensor& w, double th);

// Magnitude-loss compensation factor for one filter:
//   sum_i |w_i|  /  sum_i { |w_i| if |w_i| > th else 0 }
// Both sums use dense magnitudes. Returns 1 when the denominator is 0.
double filter_scale(std::span<const float> w, double th);

struct SparseLayer {
  Tensor value;            // thresholded (and rescaled) constant leaf
  double effective_th = 0; // per-layer shrink threshold (mth)
  int64_t zero_count = 0;
};

struct SparseSet {
  double threshold = 0.0;  // global score threshold
  std::map<std::string, SparseLayer> layers;
  int64_t total_weights = 0;
  int64_t total_zeros = 0;
};

// Derives the sparse forward values for every prunable parameter without
// touching the tape (used for evaluation and by make_sparse_weights).
SparseSet compute_sparse_values(const std::vector<PrunableParam>& params,
                                double sp_ratio, const SparsifyConfig& config);

// Full per-step pipeline: global threshold, per-layer soft/hard
// thresholding, optional filter-wise rescaling, then a straight_through
// wrapper per layer so gradients reach the raw weights unchanged. The
// whole transform sits inside the straight-through boundary.
std::map<std::string, Tensor> make_sparse_weights(
    Tape& tape, const std::vector<PrunableParam>& params, double sp_ratio,
    const SparsifyConfig& config);

// mask_i = (w_i == 0 exactly)
std::vector<uint8_t> zero_mask(const Tensor& sparse_w);

}  // namespace st3
