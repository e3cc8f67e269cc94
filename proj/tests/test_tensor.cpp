#include "st3/tensor.hpp"

#include <cmath>
#include <cstring>
#include <functional>

#include "doctest.h"
#include "st3/rng.hpp"

using namespace st3;

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, bool requires_grad,
                     double lo = -1.5, double hi = 1.5) {
  Tensor t = Tensor::zeros(shape, requires_grad);
  for (float& v : t.data()) {
    double x = rng.uniform(lo, hi);
    // keep relu kinks and near-zero denominators away
    while (std::fabs(x) < 0.1) x = rng.uniform(lo, hi);
    v = static_cast<float>(x);
  }
  return t;
}

// Central finite differences against the analytic gradients of the scalar
// functional L = sum_i c_i * out_i, with c fixed per check.
void check_gradients(const std::function<Tensor(Tape&)>& op,
                     std::vector<Tensor> inputs, uint64_t coef_seed,
                     double tol = 1e-3) {
  Tape tape;
  Tensor out = op(tape);
  Rng crng(coef_seed);
  Tensor coef = Tensor::zeros(out.shape());
  for (float& v : coef.data()) {
    const double mag = crng.uniform(0.5, 1.5);
    v = static_cast<float>(crng.bernoulli(0.5) ? mag : -mag);
  }
  Tensor loss = sum(tape, mul(tape, out, coef));
  tape.backward(loss);

  auto loss_value = [&]() {
    Tape scratch;
    Tensor o = op(scratch);
    double acc = 0.0;
    for (size_t i = 0; i < o.data().size(); ++i)
      acc += static_cast<double>(o.data()[i]) *
             static_cast<double>(coef.data()[i]);
    return acc;
  };

  const double eps = 1e-3;
  for (auto& input : inputs) {
    REQUIRE(input.has_grad());
    const std::vector<float> analytic = input.grad();
    for (size_t i = 0; i < input.data().size(); ++i) {
      const float orig = input.data()[i];
      const float hi = static_cast<float>(static_cast<double>(orig) + eps);
      const float lo = static_cast<float>(static_cast<double>(orig) - eps);
      input.data()[i] = hi;
      const double lp = loss_value();
      input.data()[i] = lo;
      const double lm = loss_value();
      input.data()[i] = orig;
      const double fd = (lp - lm) / (static_cast<double>(hi) - static_cast<double>(lo));
      const double a = static_cast<double>(analytic[i]);
      const double rel =
          std::fabs(a - fd) / std::max({std::fabs(a), std::fabs(fd), 1.0});
      INFO("element ", i, ": analytic=", a, " fd=", fd);
      CHECK(rel <= tol);
    }
  }
}

}  // namespace

TEST_CASE("matmul identity and selector examples") {
  Tape tape;
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor m = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor out = matmul(tape, eye, m);
  CHECK(out.data() == std::vector<float>{1, 2, 3, 4});

  Tensor row = Tensor::from({1, 2}, {1, 0});
  Tensor col = Tensor::from({2, 1}, {2, 5});
  CHECK(matmul(tape, row, col).data() == std::vector<float>{2});
}

TEST_CASE("matmul rejects mismatched inner dims") {
  Tape tape;
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 2});
  CHECK_THROWS_WITH_AS(matmul(tape, a, b),
                       doctest::Contains("inner dims"), Error);
}

TEST_CASE("matmul gradients match finite differences") {
  Rng rng(42);
  Tensor a = random_tensor({3, 4}, rng, true);
  Tensor b = random_tensor({4, 2}, rng, true);
  check_gradients([&](Tape& t) { return matmul(t, a, b); }, {a, b}, 1);
}

TEST_CASE("conv2d all-ones and impulse examples") {
  Tape tape;
  Tensor x = Tensor::full({1, 1, 3, 3}, 1.0f);
  Tensor w = Tensor::full({1, 1, 3, 3}, 1.0f);
  Tensor out = conv2d(tape, x, w, 1, 0);
  CHECK(out.shape() == Shape{1, 1, 1, 1});
  CHECK(out.data()[0] == doctest::Approx(9.0f));

  // delta input, pad = kh-1: output is the kernel flipped in both axes
  Tensor delta = Tensor::from({1, 1, 1, 1}, {1.0f});
  Tensor kern = Tensor::from({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor resp = conv2d(tape, delta, kern, 1, 2);
  CHECK(resp.shape() == Shape{1, 1, 3, 3});
  CHECK(resp.data() == std::vector<float>{9, 8, 7, 6, 5, 4, 3, 2, 1});
}

TEST_CASE("conv2d rejects non-positive output dims") {
  Tape tape;
  Tensor x = Tensor::zeros({1, 1, 2, 2});
  Tensor w = Tensor::zeros({1, 1, 3, 3});
  CHECK_THROWS_AS(conv2d(tape, x, w, 1, 0), Error);
}

TEST_CASE("conv2d gradients match finite differences") {
  Rng rng(43);
  SUBCASE("stride 1 pad 1") {
    Tensor x = random_tensor({2, 2, 4, 4}, rng, true);
    Tensor w = random_tensor({3, 2, 3, 3}, rng, true);
    check_gradients([&](Tape& t) { return conv2d(t, x, w, 1, 1); }, {x, w}, 2);
  }
  SUBCASE("stride 2 pad 0") {
    Tensor x = random_tensor({1, 2, 5, 5}, rng, true);
    Tensor w = random_tensor({2, 2, 3, 3}, rng, true);
    check_gradients([&](Tape& t) { return conv2d(t, x, w, 2, 0); }, {x, w}, 3);
  }
}

TEST_CASE("relu basics and gradient") {
  Tape tape;
  Tensor x = Tensor::from({2}, {-1.0f, 2.0f});
  Tensor out = relu(tape, x);
  CHECK(out.data() == std::vector<float>{0.0f, 2.0f});

  Rng rng(44);
  Tensor y = random_tensor({3, 5}, rng, true);
  check_gradients([&](Tape& t) { return relu(t, y); }, {y}, 4);
}

TEST_CASE("elementwise and shaping op gradients") {
  Rng rng(45);
  SUBCASE("add") {
    Tensor a = random_tensor({2, 3}, rng, true);
    Tensor b = random_tensor({2, 3}, rng, true);
    check_gradients([&](Tape& t) { return add(t, a, b); }, {a, b}, 5);
  }
  SUBCASE("mul") {
    Tensor a = random_tensor({2, 3}, rng, true);
    Tensor b = random_tensor({2, 3}, rng, true);
    check_gradients([&](Tape& t) { return mul(t, a, b); }, {a, b}, 6);
  }
  SUBCASE("mul_scalar") {
    Tensor a = random_tensor({7}, rng, true);
    check_gradients([&](Tape& t) { return mul_scalar(t, a, -0.7f); }, {a}, 7);
  }
  SUBCASE("add_row_bias") {
    Tensor x = random_tensor({4, 3}, rng, true);
    Tensor b = random_tensor({3}, rng, true);
    check_gradients([&](Tape& t) { return add_row_bias(t, x, b); }, {x, b}, 8);
  }
  SUBCASE("add_channel_bias") {
    Tensor x = random_tensor({2, 3, 2, 2}, rng, true);
    Tensor b = random_tensor({3}, rng, true);
    check_gradients([&](Tape& t) { return add_channel_bias(t, x, b); }, {x, b}, 9);
  }
  SUBCASE("flatten") {
    Tensor x = random_tensor({2, 2, 3}, rng, true);
    check_gradients([&](Tape& t) { return flatten(t, x); }, {x}, 10);
  }
  SUBCASE("avg_pool2d") {
    Tensor x = random_tensor({2, 2, 4, 4}, rng, true);
    check_gradients([&](Tape& t) { return avg_pool2d(t, x, 2, 2); }, {x}, 11);
  }
  SUBCASE("sum") {
    Tensor x = random_tensor({5}, rng, true);
    check_gradients([&](Tape& t) { return sum(t, x); }, {x}, 12);
  }
}

TEST_CASE("batch_norm2d training statistics and gradients") {
  Rng rng(46);
  Tensor x = random_tensor({4, 3, 2, 2}, rng, true);
  Tensor gamma = random_tensor({3}, rng, true, 0.5, 1.5);
  Tensor beta = random_tensor({3}, rng, true);
  check_gradients(
      [&](Tape& t) {
        BatchNormState state;
        state.running_mean.assign(3, 0.0f);
        state.running_var.assign(3, 1.0f);
        return batch_norm2d(t, x, gamma, beta, state, /*training=*/true);
      },
      {x, gamma, beta}, 13);
}

TEST_CASE("batch_norm2d eval mode uses running stats (hand oracle)") {
  // 2-element batch, 1 channel, 1x1 maps
  Tape tape;
  Tensor x = Tensor::from({2, 1, 1, 1}, {1.0f, 3.0f});
  Tensor gamma = Tensor::from({1}, {2.0f});
  Tensor beta = Tensor::from({1}, {0.5f});
  BatchNormState state;
  state.running_mean = {1.5f};
  state.running_var = {4.0f};
  Tensor out = batch_norm2d(tape, x, gamma, beta, state, /*training=*/false,
                            0.1f, 1e-5f);
  // y = gamma * (x - mean) / sqrt(var + eps) + beta, by hand
  const double inv = 1.0 / std::sqrt(4.0 + 1e-5);
  CHECK(out.data()[0] == doctest::Approx(2.0 * (1.0 - 1.5) * inv + 0.5).epsilon(1e-5));
  CHECK(out.data()[1] == doctest::Approx(2.0 * (3.0 - 1.5) * inv + 0.5).epsilon(1e-5));
  // eval must not touch the running stats
  CHECK(state.running_mean[0] == 1.5f);
  CHECK(state.running_var[0] == 4.0f);

  Rng rng(47);
  Tensor y = random_tensor({3, 2, 2, 2}, rng, true);
  Tensor g2 = random_tensor({2}, rng, true, 0.5, 1.5);
  Tensor b2 = random_tensor({2}, rng, true);
  BatchNormState st2;
  st2.running_mean = {0.2f, -0.1f};
  st2.running_var = {1.5f, 0.7f};
  check_gradients(
      [&](Tape& t) {
        BatchNormState local = st2;
        return batch_norm2d(t, y, g2, b2, local, /*training=*/false);
      },
      {y, g2, b2}, 14);
}

TEST_CASE("batch_norm2d training updates running stats on a hand case") {
  Tape tape;
  Tensor x = Tensor::from({2, 1, 1, 1}, {1.0f, 3.0f});
  Tensor gamma = Tensor::from({1}, {1.0f});
  Tensor beta = Tensor::from({1}, {0.0f});
  BatchNormState state;
  state.running_mean = {0.0f};
  state.running_var = {1.0f};
  batch_norm2d(tape, x, gamma, beta, state, /*training=*/true, 0.1f);
  // batch mean 2, biased var 1, unbiased var 2
  CHECK(state.running_mean[0] == doctest::Approx(0.9 * 0.0 + 0.1 * 2.0));
  CHECK(state.running_var[0] == doctest::Approx(0.9 * 1.0 + 0.1 * 2.0));
}

TEST_CASE("softmax_cross_entropy uniform case and gradient") {
  Tape tape;
  Tensor logits = Tensor::from({1, 2}, {0.0f, 0.0f});
  Tensor loss = softmax_cross_entropy(tape, logits, {0});
  CHECK(loss.item() == doctest::Approx(std::log(2.0)));

  Tensor bad = Tensor::from({1, 2}, {0.0f, 0.0f});
  CHECK_THROWS_AS(softmax_cross_entropy(tape, bad, {2}), Error);
  CHECK_THROWS_AS(softmax_cross_entropy(tape, bad, {-1}), Error);

  Rng rng(48);
  Tensor l2 = random_tensor({4, 5}, rng, true);
  check_gradients([&](Tape& t) { return softmax_cross_entropy(t, l2, {0, 3, 2, 4}); },
                  {l2}, 15);
}

TEST_CASE("straight_through passes the upstream gradient verbatim") {
  Tape tape;
  Tensor raw = Tensor::from({2}, {1.0f, 2.0f}, /*requires_grad=*/true);
  Tensor fv = Tensor::from({2}, {0.0f, 2.0f});
  Tensor st = straight_through(tape, raw, fv);
  CHECK(st.data() == fv.data());

  Tensor coef = Tensor::from({2}, {0.37f, -1.25f});
  Tensor loss = sum(tape, mul(tape, st, coef));
  tape.backward(loss);
  // identity Jacobian: raw.grad must equal the gradient at the node output
  CHECK(std::memcmp(raw.grad().data(), st.grad().data(),
                    2 * sizeof(float)) == 0);
  CHECK(raw.grad() == std::vector<float>{0.37f, -1.25f});
}

TEST_CASE("straight_through with fv == raw is the identity op") {
  Tape tape;
  Tensor raw = Tensor::from({3}, {0.5f, -1.0f, 2.0f}, true);
  Tensor st = straight_through(tape, raw, raw.clone());
  Tensor coef = Tensor::from({3}, {1.0f, 2.0f, 3.0f});
  Tensor loss = sum(tape, mul(tape, st, coef));
  tape.backward(loss);
  CHECK(st.data() == raw.data());
  CHECK(raw.grad() == coef.data());
}

TEST_CASE("straight_through: dL/draw is bit-identical to dL/dfv") {
  Rng rng(49);
  Tensor raw = random_tensor({4, 3}, rng, true);
  Tensor fv = random_tensor({4, 3}, rng, false);
  Tensor other = random_tensor({3, 2}, rng, false);

  // route 1: loss through straight_through(raw, fv)
  Tape t1;
  Tensor st = straight_through(t1, raw, fv);
  Tensor l1 = sum(t1, relu(t1, matmul(t1, st, other)));
  t1.backward(l1);

  // route 2: the same loss evaluated on fv as a differentiable leaf
  Tensor fv2 = fv.clone();
  fv2.set_requires_grad(true);
  Tape t2;
  Tensor l2 = sum(t2, relu(t2, matmul(t2, fv2, other)));
  t2.backward(l2);

  CHECK(std::memcmp(raw.grad().data(), fv2.grad().data(),
                    raw.grad().size() * sizeof(float)) == 0);
}

TEST_CASE("straight_through rejects shape mismatch") {
  Tape tape;
  Tensor raw = Tensor::zeros({2, 2}, true);
  Tensor fv = Tensor::zeros({4});
  CHECK_THROWS_AS(straight_through(tape, raw, fv), Error);
}

TEST_CASE("backward is deterministic bit for bit") {
  auto run = [](uint64_t seed) {
    Rng rng(seed);
    Tensor x = random_tensor({4, 6}, rng, true);
    Tensor w = random_tensor({6, 3}, rng, true);
    Tape tape;
    Tensor loss = softmax_cross_entropy(tape, matmul(tape, x, w), {0, 1, 2, 1});
    tape.backward(loss);
    return std::make_pair(x.grad(), w.grad());
  };
  auto [gx1, gw1] = run(1234);
  auto [gx2, gw2] = run(1234);
  CHECK(std::memcmp(gx1.data(), gx2.data(), gx1.size() * sizeof(float)) == 0);
  CHECK(std::memcmp(gw1.data(), gw2.data(), gw1.size() * sizeof(float)) == 0);
}

TEST_CASE("non-finite values are surfaced, not propagated") {
  Tape tape;
  Tensor x = Tensor::from({2}, {1e38f, 1.0f});
  CHECK_THROWS_WITH_AS(mul_scalar(tape, x, 1e38f),
                       doctest::Contains("non-finite"), Error);
}
