#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <cstring>
#include <numeric>
#include <vector>

#include "emi/kernels.hpp"
#include "emi/ops.hpp"
#include "emi/rng.hpp"
#include "emi/tape.hpp"
#include "emi/tensor.hpp"
#include "gradcheck.hpp"

using namespace emi;
using T64 = TensorT<double>;

// ---------------------------------------------------------------------------
// RNG
// ---------------------------------------------------------------------------

TEST_SUITE_BEGIN("rng");

TEST_CASE("splitmix64 matches the published reference stream") {
  // Reference outputs for the splitmix64 algorithm, seed 1234567.
  Rng r(1234567);
  CHECK(r.next_u64() == 6457827717110365317ULL);
  CHECK(r.next_u64() == 3203168211198807973ULL);
  CHECK(r.next_u64() == 9817491932198370423ULL);
}

TEST_CASE("u64 and double streams are frozen") {
  Rng r(42);
  CHECK(r.next_u64() == 0xbdd732262feb6e95ULL);
  CHECK(r.next_u64() == 0x28efe333b266f103ULL);
  CHECK(r.next_u64() == 0x47526757130f9f52ULL);
  CHECK(r.next_u64() == 0x581ce1ff0e4ae394ULL);
  Rng d(42);
  CHECK(d.next_double() == doctest::Approx(0.7415648787718233).epsilon(1e-16));
  CHECK(d.next_double() == doctest::Approx(0.1599103928769201).epsilon(1e-16));
  CHECK(d.next_double() == doctest::Approx(0.27860113025513866).epsilon(1e-16));
}

TEST_CASE("mix_seed derivations are frozen") {
  CHECK(mix_seed(7, 0) == 0xf74f14c0f8b0cb5bULL);
  CHECK(mix_seed(7, 1) == 0x87384cf5568325d9ULL);
  CHECK(mix_seed(7, 0) != mix_seed(8, 0));
}

TEST_CASE("shuffle produces the recorded permutations") {
  auto perm = [](int n, uint64_t seed) {
    std::vector<int> v(size_t(n), 0);
    std::iota(v.begin(), v.end(), 0);
    Rng r(seed);
    r.shuffle(v);
    return v;
  };
  CHECK(perm(8, mix_seed(5, 0)) == std::vector<int>{1, 0, 6, 2, 4, 5, 7, 3});
  CHECK(perm(8, mix_seed(5, 1)) == std::vector<int>{5, 2, 4, 3, 1, 6, 0, 7});
  CHECK(perm(5, 9001) == std::vector<int>{0, 3, 2, 4, 1});
}

TEST_CASE("different seeds give different orders, same seed repeats") {
  for (uint64_t s = 0; s < 20; ++s) {
    std::vector<int> a(12), b(12), c(12);
    std::iota(a.begin(), a.end(), 0);
    b = a;
    c = a;
    Rng(mix_seed(100, s)).shuffle(a);
    Rng(mix_seed(100, s)).shuffle(b);
    Rng(mix_seed(100, s + 1)).shuffle(c);
    CHECK(a == b);
    CHECK(a != c);
  }
}

TEST_CASE("normal() has the right first two moments") {
  Rng r(123);
  const int n = 40000;
  double s1 = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s1 += x;
    s2 += x * x;
  }
  const double mean = s1 / n;
  const double var = s2 / n - mean * mean;
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(var - 1.0) < 0.03);
}

TEST_CASE("next_below stays in range and covers the range") {
  Rng r(5);
  std::array<int, 7> hits{};
  for (int i = 0; i < 7000; ++i) {
    const uint64_t v = r.next_below(7);
    REQUIRE(v < 7);
    ++hits[size_t(v)];
  }
  for (int h : hits) CHECK(h > 700);  // each bucket near 1000
}

TEST_SUITE_END();

// ---------------------------------------------------------------------------
// Tensor and tape
// ---------------------------------------------------------------------------

TEST_SUITE_BEGIN("tensor");

TEST_CASE("construction, indexing, and scalar access") {
  auto t = T64::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.ndim() == 2);
  CHECK(t.extent(0) == 2);
  CHECK(t.extent(1) == 3);
  CHECK(t.numel() == 6);
  CHECK(t.at(1, 2) == 6.0);
  CHECK(t.at(0, 0) == 1.0);
  auto z = T64::zeros({4});
  CHECK(z.numel() == 4);
  CHECK(z.at(3) == 0.0);
  CHECK(T64::scalar(2.5).item() == 2.5);
  CHECK_THROWS_AS(t.item(), ContractError);
}

TEST_CASE("shape validation") {
  CHECK_THROWS_AS(T64::from_data({2, 2}, {1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(T64::zeros({-1, 4}), ShapeError);
}

TEST_CASE("copies share storage; grads follow the storage") {
  auto a = T64::from_data({2}, {1, 2}, true);
  auto b = a;
  CHECK(a.same_storage(b));
  b.ensure_grad();
  b.grad()[0] = 3;
  CHECK(a.has_grad());
  CHECK(a.grad()[0] == 3.0);
  a.zero_grad();
  CHECK_FALSE(b.has_grad());
}

TEST_CASE("backward contract: scalar loss, on-tape loss, single use") {
  TapeT<double> tp;
  auto x = T64::from_data({2}, {1, 2}, true);
  auto y = mul(tp, x, x);
  CHECK_THROWS_AS(tp.backward(y), ContractError);  // non-scalar

  auto off_tape = T64::scalar(1.0);
  CHECK_THROWS_AS(tp.backward(off_tape), ContractError);

  auto loss = sum_all(tp, y);
  tp.backward(loss);
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == 4.0);
  CHECK_THROWS_AS(tp.backward(loss), ContractError);  // consumed
}

TEST_CASE("grad-disabled tape records nothing") {
  TapeT<double> tp(false);
  auto x = T64::from_data({2}, {1, 2}, true);
  auto y = mul(tp, x, x);
  CHECK_FALSE(y.requires_grad());
  CHECK(tp.node_count() == 0);
}

TEST_SUITE_END();

// ---------------------------------------------------------------------------
// Kernels: the dispatch path must be bit-identical to the serial reference
// ---------------------------------------------------------------------------

TEST_SUITE_BEGIN("kernels");

namespace {

std::vector<float> random_vec(Rng& r, size_t n) {
  std::vector<float> v(n);
  for (auto& x : v) x = float(r.normal());
  return v;
}

}  // namespace

TEST_CASE("matmul hand example") {
  const float a[4] = {1, 2, 3, 4};
  const float b[4] = {5, 6, 7, 8};
  float c[4];
  kern::matmul(a, b, c, 2, 2, 2);
  CHECK(c[0] == 19.0f);
  CHECK(c[1] == 22.0f);
  CHECK(c[2] == 43.0f);
  CHECK(c[3] == 50.0f);
}

TEST_CASE("dispatch equals serial bit for bit, above and below the grain") {
  Rng r(2024);
  // (m, k, n) cases on both sides of parallel_grain = 32768 elements of work.
  const int cases[][3] = {{3, 4, 5}, {17, 9, 11}, {64, 64, 9}, {96, 128, 33}};
  for (auto& mkn : cases) {
    const int m = mkn[0], k = mkn[1], n = mkn[2];
    auto a = random_vec(r, size_t(m) * k);
    auto b = random_vec(r, size_t(k) * n);
    std::vector<float> c1(size_t(m) * n), c2(size_t(m) * n);
    kern::matmul(a.data(), b.data(), c1.data(), m, k, n);
    kern::serial::matmul(a.data(), b.data(), c2.data(), m, k, n);
    CHECK(std::memcmp(c1.data(), c2.data(), c1.size() * sizeof(float)) == 0);

    auto g = random_vec(r, size_t(m) * n);
    std::vector<float> ga1(size_t(m) * k, 0.1f), ga2(size_t(m) * k, 0.1f);
    kern::matmul_acc_gbt(g.data(), b.data(), ga1.data(), m, n, k);
    kern::serial::matmul_acc_gbt(g.data(), b.data(), ga2.data(), m, n, k);
    CHECK(std::memcmp(ga1.data(), ga2.data(), ga1.size() * sizeof(float)) == 0);

    std::vector<float> gb1(size_t(k) * n, -0.2f), gb2(size_t(k) * n, -0.2f);
    kern::matmul_acc_atg(a.data(), g.data(), gb1.data(), m, k, n);
    kern::serial::matmul_acc_atg(a.data(), g.data(), gb2.data(), m, k, n);
    CHECK(std::memcmp(gb1.data(), gb2.data(), gb1.size() * sizeof(float)) == 0);
  }
}

TEST_CASE("conv kernels: dispatch equals serial bit for bit") {
  Rng r(77);
  const int T = 300, din = 16, dout = 16, k = 3, dil = 4;  // above the grain
  auto x = random_vec(r, size_t(T) * din);
  auto w = random_vec(r, size_t(dout) * din * k);
  auto b = random_vec(r, size_t(dout));
  std::vector<float> y1(size_t(T) * dout), y2(size_t(T) * dout);
  kern::conv1d_causal(x.data(), w.data(), b.data(), y1.data(), T, din, dout, k,
                      dil);
  kern::serial::conv1d_causal(x.data(), w.data(), b.data(), y2.data(), T, din,
                              dout, k, dil);
  CHECK(std::memcmp(y1.data(), y2.data(), y1.size() * sizeof(float)) == 0);

  auto gy = random_vec(r, size_t(T) * dout);
  std::vector<float> dx1(size_t(T) * din, 0.5f), dx2(size_t(T) * din, 0.5f);
  kern::conv1d_acc_dx(gy.data(), w.data(), dx1.data(), T, din, dout, k, dil);
  kern::serial::conv1d_acc_dx(gy.data(), w.data(), dx2.data(), T, din, dout, k,
                              dil);
  CHECK(std::memcmp(dx1.data(), dx2.data(), dx1.size() * sizeof(float)) == 0);

  std::vector<float> dw1(size_t(dout) * din * k, 0.0f), dw2 = dw1;
  std::vector<float> db1(size_t(dout), 0.0f), db2 = db1;
  kern::conv1d_acc_dwdb(gy.data(), x.data(), dw1.data(), db1.data(), T, din,
                        dout, k, dil);
  kern::serial::conv1d_acc_dwdb(gy.data(), x.data(), dw2.data(), db2.data(), T,
                                din, dout, k, dil);
  CHECK(std::memcmp(dw1.data(), dw2.data(), dw1.size() * sizeof(float)) == 0);
  CHECK(std::memcmp(db1.data(), db2.data(), db1.size() * sizeof(float)) == 0);
}

TEST_SUITE_END();

// ---------------------------------------------------------------------------
// Ops: forward semantics
// ---------------------------------------------------------------------------

TEST_SUITE_BEGIN("ops-forward");

TEST_CASE("elementwise ops and scale") {
  TapeT<double> tp(false);
  auto a = T64::from_data({2, 2}, {1, 2, 3, 4});
  auto b = T64::from_data({2, 2}, {10, 20, 30, 40});
  CHECK(add(tp, a, b).value() == std::vector<double>{11, 22, 33, 44});
  CHECK(sub(tp, b, a).value() == std::vector<double>{9, 18, 27, 36});
  CHECK(mul(tp, a, b).value() == std::vector<double>{10, 40, 90, 160});
  CHECK(scale(tp, a, 3.0).value() == std::vector<double>{3, 6, 9, 12});
}

TEST_CASE("no implicit broadcast anywhere") {
  TapeT<double> tp(false);
  auto a = T64::zeros({2, 3});
  auto b = T64::zeros({3, 2});
  auto v = T64::zeros({3});
  CHECK_THROWS_AS(add(tp, a, b), ShapeError);
  CHECK_THROWS_AS(mul(tp, a, v), ShapeError);
  CHECK_THROWS_AS(matmul(tp, a, a), ShapeError);  // inner extents 3 vs 2
}

TEST_CASE("add_bias is the one sanctioned feature-axis broadcast") {
  TapeT<double> tp(false);
  auto x = T64::from_data({2, 3}, {0, 0, 0, 1, 1, 1});
  auto b = T64::from_data({3}, {5, 6, 7});
  CHECK(add_bias(tp, x, b).value() == std::vector<double>{5, 6, 7, 6, 7, 8});
  auto wrong = T64::from_data({2}, {1, 2});
  CHECK_THROWS_AS(add_bias(tp, x, wrong), ShapeError);
}

TEST_CASE("relu is strict at zero") {
  TapeT<double> tp(false);
  auto x = T64::from_data({5}, {-2, -0.0, 0, 1e-300, 3});
  CHECK(relu(tp, x).value() == std::vector<double>{0, 0, 0, 1e-300, 3});
}

TEST_CASE("softmax rows sum to one; uniform on constant rows") {
  TapeT<double> tp(false);
  auto x = T64::from_data({2, 3}, {0, 0, 0, 1, 2, 3});
  auto y = softmax(tp, x, 1);
  CHECK(y.at(0, 0) == doctest::Approx(1.0 / 3).epsilon(1e-15));
  CHECK(y.at(0, 1) == doctest::Approx(1.0 / 3).epsilon(1e-15));
  const double s = y.at(1, 0) + y.at(1, 1) + y.at(1, 2);
  CHECK(s == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(y.at(1, 2) > y.at(1, 1));
  // shift invariance through the max-subtraction
  auto xs = T64::from_data({2, 3}, {100, 100, 100, 101, 102, 103});
  auto ys = softmax(tp, xs, 1);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(ys.at(i, j) == doctest::Approx(y.at(i, j)).epsilon(1e-12));
}

TEST_CASE("softmax along axis 0 normalizes columns") {
  TapeT<double> tp(false);
  auto x = T64::from_data({2, 2}, {0, 5, 0, 5});
  auto y = softmax(tp, x, 0);
  CHECK(y.at(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(y.at(1, 1) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("masked softmax: masked keys are exact zeros, never touched") {
  TapeT<double> tp(false);
  const double big = 1e12;  // would dominate (or overflow exp) if not skipped
  auto x = T64::from_data({2, 3}, {1, big, 2, 0, big, 0});
  std::vector<uint8_t> mask = {1, 0, 1};
  auto y = masked_softmax_rows(tp, x, mask);
  CHECK(y.at(0, 1) == 0.0);
  CHECK(y.at(1, 1) == 0.0);
  CHECK(y.at(0, 0) + y.at(0, 2) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(y.at(1, 0) == doctest::Approx(0.5).epsilon(1e-15));

  std::vector<uint8_t> none = {0, 0, 0};
  CHECK_THROWS_AS(masked_softmax_rows(tp, x, none), ContractError);
}

TEST_CASE("layer_norm normalizes each row") {
  TapeT<double> tp(false);
  auto x = T64::from_data({1, 3}, {1, 2, 3});
  auto g = T64::from_data({3}, {1, 1, 1});
  auto b = T64::from_data({3}, {0, 0, 0});
  auto y = layer_norm(tp, x, g, b, 1e-5);
  const double inv = 1.0 / std::sqrt(2.0 / 3.0 + 1e-5);
  CHECK(y.at(0, 0) == doctest::Approx(-inv).epsilon(1e-14));
  CHECK(y.at(0, 1) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(y.at(0, 2) == doctest::Approx(inv).epsilon(1e-14));
  // gamma/beta shift and scale
  auto g2 = T64::from_data({3}, {2, 2, 2});
  auto b2 = T64::from_data({3}, {10, 10, 10});
  auto y2 = layer_norm(tp, x, g2, b2, 1e-5);
  CHECK(y2.at(0, 2) == doctest::Approx(10 + 2 * inv).epsilon(1e-14));
}

TEST_CASE("concat, slice, stack, reshape shapes and content") {
  TapeT<double> tp(false);
  auto a = T64::from_data({2, 2}, {1, 2, 3, 4});
  auto b = T64::from_data({2, 1}, {9, 8});
  auto c = concat_cols(tp, a, b);
  CHECK(c.shape() == std::vector<int>{2, 3});
  CHECK(c.value() == std::vector<double>{1, 2, 9, 3, 4, 8});

  auto s = slice_cols(tp, c, 1, 3);
  CHECK(s.value() == std::vector<double>{2, 9, 4, 8});
  CHECK_THROWS_AS(slice_cols(tp, c, 2, 1), ShapeError);
  CHECK_THROWS_AS(slice_cols(tp, c, 0, 4), ShapeError);

  auto mismatched = T64::zeros({3, 1});
  try {
    concat_cols(tp, a, mismatched);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2") != std::string::npos);  // both row counts named
    CHECK(msg.find("3") != std::string::npos);
  }

  std::vector<T64> rows = {T64::from_data({2}, {1, 2}),
                           T64::from_data({2}, {3, 4})};
  auto st = stack_rows(tp, rows);
  CHECK(st.shape() == std::vector<int>{2, 2});
  CHECK(st.value() == std::vector<double>{1, 2, 3, 4});

  auto r = reshape(tp, st, {4});
  CHECK(r.shape() == std::vector<int>{4});
  CHECK_THROWS_AS(reshape(tp, st, {3}), ShapeError);
}

TEST_CASE("reductions and masked pooling") {
  TapeT<double> tp(false);
  auto x = T64::from_data({2, 2}, {1, 2, 3, 4});
  CHECK(sum_all(tp, x).item() == 10.0);
  CHECK(mean_all(tp, x).item() == 2.5);

  auto seq = T64::from_data({3, 2}, {1, 10, 3, 30, 100, 1000});
  std::vector<uint8_t> mask = {1, 1, 0};
  auto pooled = masked_mean_pool(tp, seq, mask);
  CHECK(pooled.shape() == std::vector<int>{2});
  CHECK(pooled.at(0) == 2.0);
  CHECK(pooled.at(1) == 20.0);
  std::vector<uint8_t> none = {0, 0, 0};
  CHECK_THROWS_AS(masked_mean_pool(tp, seq, none), ContractError);
}

TEST_SUITE_END();

// ---------------------------------------------------------------------------
// Ops: gradients against central finite differences (64-bit)
// ---------------------------------------------------------------------------

TEST_SUITE_BEGIN("ops-grad");

namespace {

T64 rand_t(Rng& r, std::vector<int> shape, bool rg = true,
           double away_from_zero = 0.0) {
  auto t = T64::zeros(std::move(shape), rg);
  for (auto& v : t.value()) {
    double x = r.normal();
    if (away_from_zero > 0.0 && std::abs(x) < away_from_zero)
      x = x < 0 ? x - away_from_zero : x + away_from_zero;
    v = x;
  }
  return t;
}

// Scalarizes an op output with fixed random weights so every output element
// influences the loss differently.
T64 weighted(TapeT<double>& tp, const T64& y, const T64& c) {
  return sum_all(tp, mul(tp, y, c));
}

using Params = std::vector<std::pair<std::string, T64*>>;

void expect_grads_match(const char* what, double tol, gradcheck::Result r) {
  INFO(what, ": worst ", r.worst);
  CHECK(r.checked > 0);
  CHECK(r.max_err <= tol);
}

}  // namespace

TEST_CASE("matmul, transpose") {
  Rng r(1);
  auto a = rand_t(r, {3, 4});
  auto b = rand_t(r, {4, 5});
  auto c = rand_t(r, {3, 5}, false);
  Rng pick(2);
  auto res = gradcheck::check(
      [&](TapeT<double>& tp) {
        return weighted(tp, matmul(tp, a, b), c);
      },
      Params{{"a", &a}, {"b", &b}}, pick, 12);
  expect_grads_match("matmul", 1e-6, res);

  auto ct = rand_t(r, {4, 3}, false);
  res = gradcheck::check(
      [&](TapeT<double>& tp) { return weighted(tp, transpose(tp, a), ct); },
      Params{{"a", &a}}, pick, 12);
  expect_grads_match("transpose", 1e-6, res);
}

TEST_CASE("elementwise, scale, add_bias") {
  Rng r(3);
  auto a = rand_t(r, {4, 3});
  auto b = rand_t(r, {4, 3});
  auto c = rand_t(r, {4, 3}, false);
  Rng pick(4);
  auto res = gradcheck::check(
      [&](TapeT<double>& tp) {
        auto s = add(tp, mul(tp, a, b), sub(tp, a, b));
        return weighted(tp, scale(tp, s, 1.7), c);
      },
      Params{{"a", &a}, {"b", &b}}, pick, 12);
  expect_grads_match("elementwise chain", 1e-6, res);

  auto x = rand_t(r, {5, 3});
  auto bias = rand_t(r, {3});
  auto cw = rand_t(r, {5, 3}, false);
  res = gradcheck::check(
      [&](TapeT<double>& tp) {
        return weighted(tp, add_bias(tp, x, bias), cw);
      },
      Params{{"x", &x}, {"bias", &bias}}, pick, 12);
  expect_grads_match("add_bias", 1e-6, res);
}

TEST_CASE("relu away from the kink") {
  Rng r(5);
  auto x = rand_t(r, {4, 4}, true, 0.05);
  auto c = rand_t(r, {4, 4}, false);
  Rng pick(6);
  auto res = gradcheck::check(
      [&](TapeT<double>& tp) { return weighted(tp, relu(tp, x), c); },
      Params{{"x", &x}}, pick, 16);
  expect_grads_match("relu", 1e-6, res);
}

TEST_CASE("softmax on both axes and 1-d") {
  Rng r(7);
  Rng pick(8);
  auto x = rand_t(r, {3, 5});
  auto c = rand_t(r, {3, 5}, false);
  for (int axis : {0, 1}) {
    auto res = gradcheck::check(
        [&](TapeT<double>& tp) { return weighted(tp, softmax(tp, x, axis), c); },
        Params{{"x", &x}}, pick, 15);
    expect_grads_match(axis ? "softmax rows" : "softmax cols", 1e-6, res);
  }
  auto v = rand_t(r, {6});
  auto cv = rand_t(r, {6}, false);
  auto res = gradcheck::check(
      [&](TapeT<double>& tp) { return weighted(tp, softmax(tp, v, 0), cv); },
      Params{{"v", &v}}, pick, 6);
  expect_grads_match("softmax 1-d", 1e-6, res);
}

TEST_CASE("masked softmax: gradients flow only through unmasked keys") {
  Rng r(9);
  Rng pick(10);
  auto x = rand_t(r, {4, 6});
  auto c = rand_t(r, {4, 6}, false);
  std::vector<uint8_t> mask = {1, 0, 1, 1, 0, 1};
  auto res = gradcheck::check(
      [&](TapeT<double>& tp) {
        return weighted(tp, masked_softmax_rows(tp, x, mask), c);
      },
      Params{{"x", &x}}, pick, 24);
  expect_grads_match("masked softmax", 1e-6, res);

  // masked columns must have exactly zero gradient
  TapeT<double> tp;
  auto y = masked_softmax_rows(tp, x, mask);
  auto loss = sum_all(tp, mul(tp, y, c));
  tp.backward(loss);
  for (int i = 0; i < 4; ++i) {
    CHECK(x.grad()[size_t(i) * 6 + 1] == 0.0);
    CHECK(x.grad()[size_t(i) * 6 + 4] == 0.0);
  }
  x.zero_grad();
}

TEST_CASE("layer_norm including gamma and beta") {
  Rng r(11);
  Rng pick(12);
  auto x = rand_t(r, {4, 6});
  auto g = rand_t(r, {6});
  auto b = rand_t(r, {6});
  auto c = rand_t(r, {4, 6}, false);
  auto res = gradcheck::check(
      [&](TapeT<double>& tp) {
        return weighted(tp, layer_norm(tp, x, g, b, 1e-5), c);
      },
      Params{{"x", &x}, {"gamma", &g}, {"beta", &b}}, pick, 18);
  expect_grads_match("layer_norm", 1e-6, res);
}

TEST_CASE("concat, slice, stack, reshape, pool") {
  Rng r(13);
  Rng pick(14);
  auto a = rand_t(r, {3, 2});
  auto b = rand_t(r, {3, 4});
  auto c = rand_t(r, {3, 6}, false);
  auto res = gradcheck::check(
      [&](TapeT<double>& tp) {
        return weighted(tp, concat_cols(tp, a, b), c);
      },
      Params{{"a", &a}, {"b", &b}}, pick, 12);
  expect_grads_match("concat_cols", 1e-6, res);

  auto cs = rand_t(r, {3, 2}, false);
  res = gradcheck::check(
      [&](TapeT<double>& tp) {
        return weighted(tp, slice_cols(tp, b, 1, 3), cs);
      },
      Params{{"b", &b}}, pick, 12);
  expect_grads_match("slice_cols", 1e-6, res);

  auto r0 = rand_t(r, {4});
  auto r1 = rand_t(r, {4});
  auto cr = rand_t(r, {2, 4}, false);
  res = gradcheck::check(
      [&](TapeT<double>& tp) {
        std::vector<T64> rows = {r0, r1};
        return weighted(tp, stack_rows(tp, rows), cr);
      },
      Params{{"r0", &r0}, {"r1", &r1}}, pick, 8);
  expect_grads_match("stack_rows", 1e-6, res);

  auto x = rand_t(r, {2, 6});
  auto cx = rand_t(r, {3, 4}, false);
  res = gradcheck::check(
      [&](TapeT<double>& tp) {
        return weighted(tp, reshape(tp, x, {3, 4}), cx);
      },
      Params{{"x", &x}}, pick, 12);
  expect_grads_match("reshape", 1e-6, res);

  auto seq = rand_t(r, {5, 3});
  auto cp = rand_t(r, {3}, false);
  std::vector<uint8_t> mask = {1, 1, 0, 1, 0};
  res = gradcheck::check(
      [&](TapeT<double>& tp) {
        return weighted(tp, masked_mean_pool(tp, seq, mask), cp);
      },
      Params{{"seq", &seq}}, pick, 15);
  expect_grads_match("masked_mean_pool", 1e-6, res);

  // padded rows must carry exactly zero gradient
  TapeT<double> tp;
  auto pooled = masked_mean_pool(tp, seq, mask);
  auto loss = sum_all(tp, mul(tp, pooled, cp));
  tp.backward(loss);
  for (int j = 0; j < 3; ++j) {
    CHECK(seq.grad()[size_t(2) * 3 + j] == 0.0);
    CHECK(seq.grad()[size_t(4) * 3 + j] == 0.0);
  }
  seq.zero_grad();
}

TEST_CASE("causal conv over x, w, b") {
  Rng r(15);
  Rng pick(16);
  auto x = rand_t(r, {7, 3});
  auto w = rand_t(r, {4, 3, 2});  // dout=4, din=3, k=2
  auto b = rand_t(r, {4});
  auto c = rand_t(r, {7, 4}, false);
  auto res = gradcheck::check(
      [&](TapeT<double>& tp) {
        return weighted(tp, conv1d_causal(tp, x, w, b, 2), c);
      },
      Params{{"x", &x}, {"w", &w}, {"b", &b}}, pick, 20);
  expect_grads_match("conv1d_causal", 1e-6, res);
}

TEST_CASE("a composed differentiable chain") {
  Rng r(17);
  Rng pick(18);
  auto x = rand_t(r, {6, 4});
  auto w1 = rand_t(r, {4, 8});
  auto b1 = rand_t(r, {8});
  auto g = rand_t(r, {8});
  auto be = rand_t(r, {8});
  auto w2 = rand_t(r, {8, 3});
  auto b2 = rand_t(r, {3});
  std::vector<uint8_t> mask = {1, 1, 1, 1, 0, 0};
  auto res = gradcheck::check(
      [&](TapeT<double>& tp) {
        auto h = relu(tp, add_bias(tp, matmul(tp, x, w1), b1));
        h = layer_norm(tp, h, g, be, 1e-5);
        auto pooled = masked_mean_pool(tp, h, mask);
        auto row = reshape(tp, pooled, {1, 8});
        auto out = add_bias(tp, matmul(tp, row, w2), b2);
        return mean_all(tp, mul(tp, out, out));
      },
      Params{{"x", &x},
             {"w1", &w1},
             {"b1", &b1},
             {"g", &g},
             {"be", &be},
             {"w2", &w2},
             {"b2", &b2}},
      pick, 10);
  expect_grads_match("composed chain", 1e-5, res);
}

TEST_SUITE_END();
