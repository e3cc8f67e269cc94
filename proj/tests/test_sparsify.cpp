#include "st3/sparsify.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "doctest.h"
#include "st3/rng.hpp"

using namespace st3;

namespace {

PrunableParam make_param(const std::string& name, const Shape& shape,
                         std::vector<float> values, ParamKind kind) {
  PrunableParam p;
  p.layer_name = name;
  p.raw = Tensor::from(shape, std::move(values), /*requires_grad=*/true);
  p.sigma_factor = sigma_factor_for(shape);
  p.kind = kind;
  return p;
}

// Brute-force reference: sort all scores, count the zero set directly.
int64_t oracle_zero_count(const std::vector<double>& scores, double sp_ratio) {
  std::vector<double> sorted = scores;
  std::sort(sorted.begin(), sorted.end());
  const int64_t k = static_cast<int64_t>(
      std::floor(sp_ratio * static_cast<double>(sorted.size())));
  if (k == 0) return static_cast<int64_t>(
      std::count(scores.begin(), scores.end(), 0.0));
  const double th = sorted[static_cast<size_t>(k - 1)];
  return static_cast<int64_t>(
      std::count_if(scores.begin(), scores.end(), [&](double s) { return s <= th; }));
}

}  // namespace

TEST_CASE("soft_threshold formula examples") {
  Tensor w = Tensor::from({4}, {0.5f, -0.5f, 0.1f, 0.0f});
  Tensor out = soft_threshold(w, 0.2);
  CHECK(out.data()[0] == doctest::Approx(0.3f));
  CHECK(out.data()[1] == doctest::Approx(-0.3f));
  CHECK(out.data()[2] == 0.0f);
  CHECK(out.data()[3] == 0.0f);

  Tensor id = soft_threshold(w, 0.0);
  CHECK(id.data() == w.data());
  CHECK_THROWS_AS(soft_threshold(w, -0.1), Error);
}

TEST_CASE("soft_threshold matches a brute-force oracle") {
  Rng rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    const float w = static_cast<float>(rng.uniform(-2.0, 2.0));
    const double th = rng.uniform(0.0, 1.5);
    Tensor t = Tensor::from({1}, {w});
    const double a = std::fabs(static_cast<double>(w)) - th;
    const double expect = a > 0.0 ? (w > 0 ? a : -a) : 0.0;
    CHECK(std::fabs(soft_threshold(t, th).data()[0] - expect) <= 1e-6);
  }
}

TEST_CASE("hard_threshold keeps or zeroes") {
  Tensor w = Tensor::from({3}, {0.5f, 0.2f, -0.19f});
  Tensor out = hard_threshold(w, 0.2);
  CHECK(out.data()[0] == 0.5f);
  CHECK(out.data()[1] == 0.0f);  // boundary zeroed (<= th zero set)
  CHECK(out.data()[2] == 0.0f);
}

TEST_CASE("hard_threshold output is elementwise in {0, w}") {
  Rng rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor w = Tensor::zeros({17});
    for (float& v : w.data()) v = static_cast<float>(rng.uniform(-2, 2));
    const double th = rng.uniform(0.0, 1.0);
    Tensor out = hard_threshold(w, th);
    for (size_t i = 0; i < w.data().size(); ++i) {
      const bool keep = out.data()[i] == w.data()[i];
      const bool zero = out.data()[i] == 0.0f;
      CHECK((keep || zero));
    }
  }
}

TEST_CASE("soft_threshold is 1-Lipschitz in w and continuous in th") {
  Rng rng(13);
  for (int trial = 0; trial < 500; ++trial) {
    const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);
    const double th1 = rng.uniform(0, 1), th2 = rng.uniform(0, 1);
    Tensor ta = Tensor::from({1}, {static_cast<float>(a)});
    Tensor tb = Tensor::from({1}, {static_cast<float>(b)});
    const double fa = soft_threshold(ta, th1).data()[0];
    const double fb = soft_threshold(tb, th1).data()[0];
    CHECK(std::fabs(fa - fb) <= std::fabs(a - b) + 1e-6);
    const double fa2 = soft_threshold(ta, th2).data()[0];
    CHECK(std::fabs(fa - fa2) <= std::fabs(th1 - th2) + 1e-6);
  }
}

TEST_CASE("filter_scale formula and degenerate filter policy") {
  std::vector<float> filt = {0.5f, 0.1f, 0.4f};
  CHECK(filter_scale(filt, 0.2) == doctest::Approx(1.0 / 0.9));
  CHECK(filter_scale(filt, 0.0) == 1.0);  // exact
  CHECK(filter_scale(filt, 0.6) == 1.0);  // whole filter below threshold
}

TEST_CASE("filter_scale >= 1 whenever a weight survives") {
  Rng rng(14);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<float> filt(9);
    for (float& v : filt) v = static_cast<float>(rng.uniform(-1, 1));
    const double th = rng.uniform(0.0, 0.8);
    double den = 0;
    for (float v : filt)
      if (std::fabs(static_cast<double>(v)) > th) den += std::fabs(v);
    if (den > 0.0) CHECK(filter_scale(filt, th) >= 1.0);
  }
}

TEST_CASE("lamp_scores hand cases") {
  std::vector<float> two = {1.0f, 1.0f};
  auto s = lamp_scores(two);
  CHECK(s[0] == doctest::Approx(0.5));
  CHECK(s[1] == doctest::Approx(1.0));

  std::vector<float> one = {3.0f};
  CHECK(lamp_scores(one)[0] == doctest::Approx(1.0));

  std::vector<float> zeros = {0.0f, 0.0f};
  auto sz = lamp_scores(zeros);
  CHECK(sz[0] == 0.0);
  CHECK(sz[1] == 0.0);

  CHECK_THROWS_AS(lamp_scores(std::vector<float>{}), Error);
}

TEST_CASE("lamp_scores: in (0,1] and non-decreasing along sorted order") {
  Rng rng(15);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<float> w(37);
    for (float& v : w) {
      v = static_cast<float>(rng.uniform(-2, 2));
      while (v == 0.0f) v = static_cast<float>(rng.uniform(-2, 2));
    }
    auto scores = lamp_scores(w);
    std::vector<size_t> order(w.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      return std::fabs(w[a]) < std::fabs(w[b]);
    });
    double prev = 0.0;
    for (size_t u = 0; u < order.size(); ++u) {
      const double s = scores[order[u]];
      CHECK(s > 0.0);
      CHECK(s <= 1.0 + 1e-12);
      CHECK(s >= prev - 1e-12);
      prev = s;
    }
  }
}

TEST_CASE("global_threshold sort-and-index oracle") {
  auto p = make_param("l", {1, 4}, {0.1f, 0.2f, 0.3f, 0.4f}, ParamKind::kLinear);
  std::vector<PrunableParam> params;
  params.push_back(std::move(p));

  CHECK(global_threshold(params, 0.5, Allocation::kGlobalL1) ==
        doctest::Approx(0.2));
  CHECK(global_threshold(params, 0.0, Allocation::kGlobalL1) == 0.0);
  CHECK_THROWS_AS(global_threshold({}, 0.5, Allocation::kGlobalL1), Error);
  CHECK_THROWS_AS(global_threshold(params, 1.0, Allocation::kGlobalL1), Error);
}

TEST_CASE("global_threshold: sp=0.99 zeroes exactly 990 of 1000") {
  Rng rng(16);
  std::vector<float> w(1000);
  for (float& v : w) {
    v = static_cast<float>(rng.uniform(-1, 1));
    while (v == 0.0f) v = static_cast<float>(rng.uniform(-1, 1));
  }
  std::vector<PrunableParam> params;
  params.push_back(make_param("l", {10, 100}, w, ParamKind::kLinear));
  const double th = global_threshold(params, 0.99, Allocation::kGlobalL1);
  int64_t at_or_below = 0;
  for (float v : w)
    if (std::fabs(static_cast<double>(v)) <= th) ++at_or_below;
  CHECK(at_or_below == 990);
}

TEST_CASE("make_sparse_weights: sp=0 is the identity transform") {
  Rng rng(17);
  std::vector<float> w(60);
  for (float& v : w) v = static_cast<float>(rng.normal(0, 0.5));
  std::vector<PrunableParam> params;
  params.push_back(make_param("l", {6, 10}, w, ParamKind::kLinear));
  SparsifyConfig cfg;  // soft + rescale + global_l1
  SparseSet set = compute_sparse_values(params, 0.0, cfg);
  CHECK(set.threshold == 0.0);
  CHECK(set.layers.at("l").value.data() == w);
  CHECK(set.total_zeros == 0);
}

TEST_CASE("make_sparse_weights: counting oracle on a 2-layer net") {
  Rng rng(18);
  auto distinct = [&](size_t n) {
    std::vector<float> w(n);
    for (float& v : w) v = static_cast<float>(rng.normal(0, 1.0));
    return w;
  };
  for (double sp : {0.25, 0.5, 0.9}) {
    std::vector<PrunableParam> params;
    params.push_back(make_param("a", {8, 10}, distinct(80), ParamKind::kLinear));
    params.push_back(make_param("b", {4, 8}, distinct(32), ParamKind::kLinear));
    for (Allocation alloc :
         {Allocation::kGlobalL1, Allocation::kSigma, Allocation::kLamp}) {
      SparsifyConfig cfg;
      cfg.allocation = alloc;
      SparseSet set = compute_sparse_values(params, sp, cfg);
      const int64_t expect = static_cast<int64_t>(std::floor(sp * 112));
      INFO("allocation ", allocation_name(alloc), " sp ", sp);
      CHECK(set.total_zeros == expect);
    }
  }
}

TEST_CASE("sigma mode shifts zeros toward small-fan-in layers") {
  // layer A: sigma 3 (fan-in 9), layer B: sigma 30 (fan-in 900). Same
  // weight values, so sigma scoring must zero A's weights first.
  std::vector<float> wa(18), wb(1800);
  Rng rng(19);
  for (float& v : wa) v = static_cast<float>(rng.uniform(0.5, 1.5));
  for (float& v : wb) v = static_cast<float>(rng.uniform(0.5, 1.5));
  std::vector<PrunableParam> params;
  params.push_back(make_param("a", {2, 9}, wa, ParamKind::kLinear));
  params.push_back(make_param("b", {2, 900}, wb, ParamKind::kLinear));
  CHECK(params[0].sigma_factor == doctest::Approx(3.0));
  CHECK(params[1].sigma_factor == doctest::Approx(30.0));

  SparsifyConfig l1;
  l1.allocation = Allocation::kGlobalL1;
  SparsifyConfig sig;
  sig.allocation = Allocation::kSigma;
  // Effective per-layer thresholds differ 10x between the layers.
  SparseSet s1 = compute_sparse_values(params, 0.5, l1);
  SparseSet s2 = compute_sparse_values(params, 0.5, sig);
  CHECK(s2.layers.at("a").effective_th ==
        doctest::Approx(10.0 * s2.layers.at("b").effective_th));
  // sigma mode zeroes all of A (scores ~[1.5,4.5] vs B ~[15,45])
  CHECK(s2.layers.at("a").zero_count == 18);
  // l1 mode treats them alike; A keeps roughly half
  CHECK(s1.layers.at("a").zero_count < 18);
}

TEST_CASE("zero set is monotone non-decreasing in th") {
  Rng rng(20);
  std::vector<float> w(100);
  for (float& v : w) v = static_cast<float>(rng.uniform(-1, 1));
  Tensor t = Tensor::from({100}, w);
  for (bool soft : {true, false}) {
    std::vector<uint8_t> prev(100, 0);
    for (double th = 0.0; th <= 1.0; th += 0.05) {
      Tensor out = soft ? soft_threshold(t, th) : hard_threshold(t, th);
      auto mask = zero_mask(out);
      for (size_t i = 0; i < mask.size(); ++i) {
        if (prev[i]) CHECK(mask[i]);  // raising th never un-zeros
      }
      prev = mask;
    }
  }
}

TEST_CASE("rescale multiplies whole filters inside the ST boundary") {
  // one filter [0.5, 0.1, 0.4] with mth 0.2: survivors scaled by 1/0.9
  std::vector<PrunableParam> params;
  params.push_back(make_param("l", {1, 3}, {0.5f, 0.1f, 0.4f}, ParamKind::kLinear));
  // quantile: k = floor(1/3 * 3) = 1 -> th = 0.1; soft shrink by 0.1
  SparsifyConfig cfg;
  SparseSet set = compute_sparse_values(params, 1.0 / 3.0, cfg);
  CHECK(set.threshold == doctest::Approx(0.1));
  const double scale = 1.0 / 0.9;
  CHECK(set.layers.at("l").value.data()[0] ==
        doctest::Approx((0.5 - 0.1) * scale));
  CHECK(set.layers.at("l").value.data()[1] == 0.0f);
  CHECK(set.layers.at("l").value.data()[2] ==
        doctest::Approx((0.4 - 0.1) * scale));
}

TEST_CASE("STE contract: pipeline gradient reaches raw unchanged") {
  Rng rng(21);
  std::vector<float> w1(40), w2(15);
  for (float& v : w1) v = static_cast<float>(rng.normal(0, 0.6));
  for (float& v : w2) v = static_cast<float>(rng.normal(0, 0.6));
  std::vector<PrunableParam> params;
  params.push_back(make_param("fc1", {5, 8}, w1, ParamKind::kLinear));
  params.push_back(make_param("fc2", {3, 5}, w2, ParamKind::kLinear));

  SparsifyConfig cfg;
  Tape tape;
  WeightMap ws = make_sparse_weights(tape, params, 0.6, cfg);

  Tensor x = Tensor::zeros({2, 8});
  for (float& v : x.data()) v = static_cast<float>(rng.normal(0, 1));

  // two tiny matmul layers on the transposed sparse weights
  Tensor h = matmul(tape, x, transpose2d(tape, ws.at("fc1")));
  h = relu(tape, h);
  Tensor logits = matmul(tape, h, transpose2d(tape, ws.at("fc2")));
  Tensor loss = softmax_cross_entropy(tape, logits, {1, 0});
  tape.backward(loss);

  for (auto& p : params) {
    const Tensor& st_out = ws.at(p.layer_name);
    CHECK(std::memcmp(p.raw.grad().data(), st_out.grad().data(),
                      p.raw.grad().size() * sizeof(float)) == 0);
  }
}

TEST_CASE("sigma argpick invariance: scores rank, not raw magnitudes") {
  Rng rng(22);
  std::vector<float> wa(24), wb(36);
  for (float& v : wa) v = static_cast<float>(rng.normal(0, 1));
  for (float& v : wb) v = static_cast<float>(rng.normal(0, 1));

  std::vector<PrunableParam> base;
  base.push_back(make_param("a", {4, 6}, wa, ParamKind::kLinear));
  base.push_back(make_param("b", {6, 6}, wb, ParamKind::kLinear));

  // scale layer a's weights by c and its sigma factor by 1/c: scores and
  // therefore the selected zero set are unchanged
  const float c = 7.5f;
  std::vector<float> wa_scaled = wa;
  for (float& v : wa_scaled) v *= c;
  std::vector<PrunableParam> scaled;
  scaled.push_back(make_param("a", {4, 6}, wa_scaled, ParamKind::kLinear));
  scaled.push_back(make_param("b", {6, 6}, wb, ParamKind::kLinear));
  scaled[0].sigma_factor = base[0].sigma_factor / c;

  SparsifyConfig cfg;
  cfg.allocation = Allocation::kSigma;
  SparseSet s1 = compute_sparse_values(base, 0.5, cfg);
  SparseSet s2 = compute_sparse_values(scaled, 0.5, cfg);
  CHECK(zero_mask(s1.layers.at("a").value) == zero_mask(s2.layers.at("a").value));
  CHECK(zero_mask(s1.layers.at("b").value) == zero_mask(s2.layers.at("b").value));
}

TEST_CASE("zero_mask counts agree with reported sparsity") {
  Rng rng(23);
  std::vector<float> w(200);
  for (float& v : w) v = static_cast<float>(rng.normal(0, 1));
  std::vector<PrunableParam> params;
  params.push_back(make_param("l", {20, 10}, w, ParamKind::kLinear));
  SparsifyConfig cfg;
  SparseSet set = compute_sparse_values(params, 0.7, cfg);
  auto mask = zero_mask(set.layers.at("l").value);
  int64_t zeros = 0;
  for (uint8_t z : mask) zeros += z;
  CHECK(zeros == set.total_zeros);
  CHECK(zeros == set.layers.at("l").zero_count);
}

TEST_CASE("zero-count oracle agrees across random nets") {
  Rng rng(24);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<float> w(64);
    for (float& v : w) v = static_cast<float>(rng.normal(0, 1));
    std::vector<PrunableParam> params;
    params.push_back(make_param("l", {8, 8}, w, ParamKind::kLinear));
    const double sp = rng.uniform(0.0, 0.95);
    SparsifyConfig cfg;
    cfg.threshold_mode =
        rng.bernoulli(0.5) ? ThresholdMode::kSoft : ThresholdMode::kHard;
    SparseSet set = compute_sparse_values(params, sp, cfg);
    std::vector<double> scores;
    for (float v : w) scores.push_back(std::fabs(static_cast<double>(v)));
    CHECK(set.total_zeros == oracle_zero_count(scores, sp));
  }
}
