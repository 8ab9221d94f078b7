#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "gradcheck.hpp"
#include "mdcl/gemm.hpp"
#include "mdcl/optim.hpp"
#include "mdcl/rng.hpp"
#include "mdcl/tensor.hpp"

using namespace mdcl;
using mdcl_test::check_gradients;
using mdcl_test::random_values;

namespace {

Shape rand_shape(Rng& rng, int max_rank = 4, int max_extent = 4) {
  const int rank = static_cast<int>(rng.randint(1, max_rank));
  Shape s;
  for (int i = 0; i < rank; ++i)
    s.push_back(static_cast<int>(rng.randint(1, max_extent)));
  return s;
}

// Pushes b[i] away from a[i] wherever the pair sits near a min/max kink, so
// the finite-difference step never crosses the tie.
void separate_pairs(const std::vector<double>& a, std::vector<double>& b,
                    double min_gap = 5e-3) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::abs(a[i] - b[i]) < min_gap) b[i] += b[i] >= a[i] ? min_gap : -min_gap;
}

// Spreads each group of `len` values compared by an axis-min so no two sit
// within the finite-difference step of each other.
void separate_axis_groups(std::vector<double>& v, std::int64_t outer, int len,
                          std::int64_t inner, double min_gap = 5e-3) {
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t i = 0; i < inner; ++i)
      for (int x = 1; x < len; ++x)
        for (int y = 0; y < x; ++y) {
          double& vx = v[(o * len + x) * inner + i];
          const double vy = v[(o * len + y) * inner + i];
          if (std::abs(vx - vy) < min_gap) vx += vx >= vy ? min_gap : -min_gap;
        }
}

// Wraps an op builder into a scalar probe loss: mean of the output against
// weights drawn once, so every output element receives a distinct upstream
// gradient and the closure stays deterministic across FD re-evaluations.
template <typename OpFn>
void probe_check(const std::string& label, std::vector<TensorD> inputs, Rng& rng, OpFn op) {
  TensorD y0 = op();
  TensorD w = TensorD::from_data(y0.shape(), random_values(rng, y0.size(), -1.0, 1.0));
  check_gradients(label, std::move(inputs),
                  [op, w] { return reduce_mean(mul(op(), w)); });
}

}  // namespace

// ---------------------------------------------------------------------------
// Frozen examples

TEST_CASE("tensor: elementwise examples") {
  auto a = TensorF::from_data({2}, {1, 2});
  auto b = TensorF::from_data({2}, {3, 4});
  auto s = add(a, b);
  CHECK(s.values()[0] == 4);
  CHECK(s.values()[1] == 6);

  // broadcast: shape {1} against shape {3}
  auto c = TensorF::from_data({1}, {2});
  auto d = TensorF::from_data({3}, {1, 2, 3});
  auto m = mul(c, d);
  REQUIRE(m.shape() == Shape{3});
  CHECK(m.values()[0] == 2);
  CHECK(m.values()[1] == 4);
  CHECK(m.values()[2] == 6);
}

TEST_CASE("tensor: min ties route gradient to the first operand") {
  auto x1 = TensorF::param({1}, {0.7f});
  auto x2 = TensorF::param({1}, {0.7f});
  auto y = reduce_sum(minimum(x1, x2));
  backward(y);
  CHECK(x1.grad()[0] == doctest::Approx(1.0));
  CHECK(x2.grad()[0] == doctest::Approx(0.0));
}

TEST_CASE("tensor: activation examples") {
  auto z = sigmoid(TensorF::from_data({1}, {0}));
  CHECK(z.values()[0] == doctest::Approx(0.5));
  auto c = clamp(TensorF::from_data({1}, {1.7f}), 0.1f, 1.0f);
  CHECK(c.values()[0] == doctest::Approx(1.0));
  auto p = TensorF::param({1}, {-3});
  auto av = abs(p);
  CHECK(av.values()[0] == doctest::Approx(3.0));
  backward(reduce_sum(av));
  CHECK(p.grad()[0] == doctest::Approx(-1.0));
}

TEST_CASE("tensor: conv2d examples") {
  // 1x1 identity kernel
  auto img = TensorF::from_data({1, 1, 2, 3}, {1, 2, 3, 4, 5, 6});
  auto ident = TensorF::from_data({1, 1, 1, 1}, {1});
  auto out = conv2d(img, ident, TensorF(), 1, 0);
  REQUIRE(out.shape() == Shape{1, 1, 2, 3});
  for (int i = 0; i < 6; ++i) CHECK(out.values()[i] == img.values()[i]);

  // all-zero kernel
  auto zk = TensorF::zeros({2, 1, 1, 1});
  auto zout = conv2d(img, zk, TensorF(), 1, 0);
  for (float v : zout.values()) CHECK(v == 0.0f);

  // 2x2 input, 2x2 ones kernel -> [[10]]
  auto x = TensorF::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  auto ones = TensorF::full({1, 1, 2, 2}, 1.0f);
  auto y = conv2d(x, ones, TensorF(), 1, 0);
  REQUIRE(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.values()[0] == doctest::Approx(10.0));

  CHECK_THROWS_AS(conv2d(img, TensorF::zeros({1, 3, 1, 1}), TensorF(), 1, 0),
                  std::runtime_error);
}

TEST_CASE("tensor: bilinear_resize examples") {
  auto c = TensorF::full({1, 2, 3, 3}, 0.37f);
  auto up = bilinear_resize(c, 7, 5);
  for (float v : up.values()) CHECK(v == doctest::Approx(0.37));

  auto img = TensorF::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  auto same = bilinear_resize(img, 2, 2);
  for (int i = 0; i < 4; ++i) CHECK(same.values()[i] == doctest::Approx(img.values()[i]));

  auto row = TensorF::from_data({1, 1, 1, 2}, {0, 2});
  auto up4 = bilinear_resize(row, 1, 4);
  REQUIRE(up4.shape() == Shape{1, 1, 1, 4});
  CHECK(up4.values()[0] == doctest::Approx(0.0));
  CHECK(up4.values()[1] == doctest::Approx(0.5));
  CHECK(up4.values()[2] == doctest::Approx(1.5));
  CHECK(up4.values()[3] == doctest::Approx(2.0));
}

TEST_CASE("tensor: grid_sample examples") {
  auto img = TensorF::from_data({1, 1, 2, 2}, {0, 1, 2, 3});

  // native lattice reproduces the image
  auto lattice = TensorF::from_data({1, 2, 2, 2}, {0, 0, 1, 0, 0, 1, 1, 1});
  auto same = grid_sample(img, lattice);
  for (int i = 0; i < 4; ++i) CHECK(same.values()[i] == doctest::Approx(img.values()[i]));

  auto mid = grid_sample(img, TensorF::from_data({1, 1, 1, 2}, {0.5f, 0.5f}));
  CHECK(mid.values()[0] == doctest::Approx(1.5));

  auto far = grid_sample(img, TensorF::from_data({1, 1, 1, 2}, {-10, -10}));
  CHECK(far.values()[0] == doctest::Approx(0.0));  // border clamp to (0,0)
}

TEST_CASE("tensor: reduction examples") {
  auto c = TensorF::full({2, 3, 4}, 2.5f);
  CHECK(reduce_mean(c).item() == doctest::Approx(2.5));

  auto m = TensorF::from_data({2, 2}, {3, 1, 2, 5});
  auto mn = reduce_min_axis(m, 1);
  REQUIRE(mn.shape() == Shape{2});
  CHECK(mn.values()[0] == doctest::Approx(1.0));
  CHECK(mn.values()[1] == doctest::Approx(2.0));

  auto p = TensorF::param({3}, {1, 2, 3});
  backward(reduce_sum(p));
  for (int i = 0; i < 3; ++i) CHECK(p.grad()[i] == doctest::Approx(1.0));
}

TEST_CASE("tensor: backward basics") {
  auto x = TensorF::param({1}, {3});
  backward(reduce_sum(mul(x, x)));
  CHECK(x.grad()[0] == doctest::Approx(6.0));

  auto y = TensorF::param({1}, {1.5f});
  backward(reduce_sum(add(y, y)));
  CHECK(y.grad()[0] == doctest::Approx(2.0));

  CHECK_THROWS_AS(backward(TensorF::from_data({2}, {1, 2})), std::runtime_error);
}

TEST_CASE("tensor: fan-out accumulates k contributions") {
  auto x = TensorF::param({2}, {0.3f, -0.8f});
  // three consumers through different op types
  auto y = add(add(mul(x, x), mul_scalar(x, 2.0f)), neg(x));
  backward(reduce_sum(y));
  for (int i = 0; i < 2; ++i)
    CHECK(x.grad()[i] == doctest::Approx(2.0f * x.values()[i] + 2.0f - 1.0f));
}

TEST_CASE("tensor: shape errors name both shapes") {
  auto a = TensorF::zeros({2, 3});
  auto b = TensorF::zeros({4});
  CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("[2,3]"), std::runtime_error);
}

// ---------------------------------------------------------------------------
// Optimizer

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  auto p = TensorF::param({3}, {1, -2, 3});
  Adam<float> opt({{"p", p}}, 0.1f);
  opt.step();
  CHECK(p.values()[0] == 1.0f);
  CHECK(p.values()[1] == -2.0f);
  CHECK(p.values()[2] == 3.0f);
}

TEST_CASE("adam: first step moves by -lr * sign(g)") {
  auto p = TensorF::param({3}, {1.0f, -2.0f, 3.0f});
  Adam<float> opt({{"p", p}}, 0.05f);
  auto w = TensorF::from_data({3}, {2.0f, -0.7f, 1.3f});
  backward(reduce_sum(mul(p, w)));  // grad = w
  opt.step();
  CHECK(p.values()[0] == doctest::Approx(1.0f - 0.05f).epsilon(1e-5));
  CHECK(p.values()[1] == doctest::Approx(-2.0f + 0.05f).epsilon(1e-5));
  CHECK(p.values()[2] == doctest::Approx(3.0f - 0.05f).epsilon(1e-5));
}

TEST_CASE("adam: non-finite gradient names the parameter") {
  auto p = TensorF::param({1}, {0.0f});
  Adam<float> opt({{"enc.w1", p}}, 0.1f);
  backward(reduce_sum(divide(p, p)));  // 0/0 -> NaN gradient
  CHECK_THROWS_WITH_AS(opt.step(), doctest::Contains("enc.w1"), std::runtime_error);
}

TEST_CASE("adam: identical runs are bitwise identical") {
  auto run = [](std::vector<float>& out) {
    Rng rng(77);
    std::vector<float> init(12);
    for (auto& v : init) v = static_cast<float>(rng.normal(0.0, 0.1));
    auto p = TensorF::param({3, 4}, init);
    Adam<float> opt({{"p", p}}, 1e-2f);
    for (int it = 0; it < 25; ++it) {
      std::vector<float> tv(12);
      for (auto& v : tv) v = static_cast<float>(rng.uniform(-1.0, 1.0));
      auto target = TensorF::from_data({3, 4}, tv);
      auto diff = sub(p, target);
      backward(reduce_mean(mul(diff, diff)));
      opt.step();
      opt.zero_grad();
    }
    out.assign(p.values().begin(), p.values().end());
  };
  std::vector<float> r1, r2;
  run(r1);
  run(r2);
  CHECK(std::memcmp(r1.data(), r2.data(), r1.size() * sizeof(float)) == 0);
}

// ---------------------------------------------------------------------------
// GEMM against a naive reference

TEST_CASE("gemm: matches naive triple loop in all transpose modes") {
  Rng rng(31);
  for (int rep = 0; rep < 12; ++rep) {
    const int m = static_cast<int>(rng.randint(1, 37));
    const int n = static_cast<int>(rng.randint(1, 70));
    const int k = static_cast<int>(rng.randint(1, 23));
    const bool ta = rng.bernoulli(0.5), tb = rng.bernoulli(0.5);
    const int lda = ta ? m : k;
    const int ldb = tb ? k : n;
    std::vector<double> A((ta ? k : m) * lda), B((tb ? n : k) * ldb);
    for (auto& v : A) v = rng.uniform(-1.0, 1.0);
    for (auto& v : B) v = rng.uniform(-1.0, 1.0);
    std::vector<double> C(m * n, 0.5), Cref(m * n, 0.5);
    const bool acc = rng.bernoulli(0.5);
    gemm<double>(ta, tb, m, n, k, A.data(), lda, B.data(), ldb, C.data(), n, acc);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        double s = acc ? Cref[i * n + j] : 0.0;
        for (int kk = 0; kk < k; ++kk) {
          const double av = ta ? A[kk * lda + i] : A[i * lda + kk];
          const double bv = tb ? B[j * ldb + kk] : B[kk * ldb + j];
          s += av * bv;
        }
        Cref[i * n + j] = s;
      }
    for (int i = 0; i < m * n; ++i) CHECK(C[i] == doctest::Approx(Cref[i]).epsilon(1e-10));
  }
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checks, 20 random instances per op

TEST_CASE("grad: elementwise binary ops") {
  Rng rng(501);
  for (int rep = 0; rep < 20; ++rep) {
    Shape s = rand_shape(rng);
    const std::int64_t n = numel(s);
    std::vector<double> avals = random_values(rng, n, -1.0, 1.0);
    std::vector<double> bvals = random_values(rng, n, -1.0, 1.0);
    separate_pairs(avals, bvals);
    auto a = TensorD::param(s, avals);
    auto b = TensorD::param(s, bvals);
    probe_check("add", {a, b}, rng, [=] { return add(a, b); });
    probe_check("sub", {a, b}, rng, [=] { return sub(a, b); });
    probe_check("mul", {a, b}, rng, [=] { return mul(a, b); });
    probe_check("minimum", {a, b}, rng, [=] { return minimum(a, b); });
    probe_check("maximum", {a, b}, rng, [=] { return maximum(a, b); });
    // divide: keep |b| away from 0
    std::vector<double> bv = random_values(rng, n, 0.4, 1.4);
    for (auto& v : bv)
      if (rng.bernoulli(0.5)) v = -v;
    auto bd = TensorD::param(s, bv);
    probe_check("divide", {a, bd}, rng, [=] { return divide(a, bd); });
  }
}

TEST_CASE("grad: broadcasting binary ops") {
  Rng rng(502);
  for (int rep = 0; rep < 20; ++rep) {
    // pick a full shape and knock random dims of b down to 1
    Shape s = rand_shape(rng, 4, 4);
    Shape sb = s;
    for (auto& d : sb)
      if (rng.bernoulli(0.5)) d = 1;
    auto a = TensorD::param(s, random_values(rng, numel(s), -1.0, 1.0));
    auto b = TensorD::param(sb, random_values(rng, numel(sb), -1.0, 1.0));
    probe_check("bcast add", {a, b}, rng, [=] { return add(a, b); });
    probe_check("bcast mul", {a, b}, rng, [=] { return mul(a, b); });
    probe_check("bcast mul rev", {a, b}, rng, [=] { return mul(b, a); });
  }
}

TEST_CASE("grad: unary ops") {
  Rng rng(503);
  for (int rep = 0; rep < 20; ++rep) {
    Shape s = rand_shape(rng);
    const std::int64_t n = numel(s);
    // generic values, kept away from the kinks of abs/relu/elu at 0
    std::vector<double> vals = random_values(rng, n, -1.0, 1.0);
    for (auto& v : vals)
      if (std::abs(v) < 0.05) v += v >= 0 ? 0.1 : -0.1;
    auto a = TensorD::param(s, vals);
    probe_check("neg", {a}, rng, [=] { return neg(a); });
    probe_check("abs", {a}, rng, [=] { return mdcl::abs(a); });
    probe_check("exp", {a}, rng, [=] { return mdcl::exp(a); });
    probe_check("sin", {a}, rng, [=] { return mdcl::sin(a); });
    probe_check("cos", {a}, rng, [=] { return mdcl::cos(a); });
    probe_check("sigmoid", {a}, rng, [=] { return sigmoid(a); });
    probe_check("relu", {a}, rng, [=] { return relu(a); });
    probe_check("elu", {a}, rng, [=] { return elu(a); });
    probe_check("softplus", {a}, rng, [=] { return softplus(a); });
    probe_check("add_scalar", {a}, rng, [=] { return add_scalar(a, 0.37); });
    probe_check("mul_scalar", {a}, rng, [=] { return mul_scalar(a, -1.61); });
    // clamp with values clear of both edges (vals avoid [-0.65,-0.55] etc. rarely;
    // the gap guard below nudges any value near an edge)
    std::vector<double> cv = vals;
    for (auto& v : cv) {
      if (std::abs(std::abs(v) - 0.6) < 0.05) v += v > 0 ? 0.1 : -0.1;
    }
    auto ac = TensorD::param(s, cv);
    probe_check("clamp", {ac}, rng, [=] { return clamp(ac, -0.6, 0.6); });
    // log and sqrt on positive values
    auto pos = TensorD::param(s, random_values(rng, n, 0.3, 2.0));
    probe_check("log", {pos}, rng, [=] { return mdcl::log(pos); });
    probe_check("sqrt", {pos}, rng, [=] { return mdcl::sqrt(pos); });
  }
}

TEST_CASE("grad: shape ops") {
  Rng rng(504);
  for (int rep = 0; rep < 20; ++rep) {
    const int d0 = static_cast<int>(rng.randint(2, 4));
    const int d1 = static_cast<int>(rng.randint(2, 4));
    const int d2 = static_cast<int>(rng.randint(2, 5));
    Shape s{d0, d1, d2};
    auto a = TensorD::param(s, random_values(rng, numel(s), -1.0, 1.0));
    auto b = TensorD::param(s, random_values(rng, numel(s), -1.0, 1.0));
    probe_check("reshape", {a}, rng, [=] { return reshape(a, {d0 * d1, d2}); });
    const int axis = static_cast<int>(rng.randint(0, 2));
    probe_check("concat", {a, b}, rng, [=] { return concat<double>({a, b}, axis); });
    const int len = static_cast<int>(rng.randint(1, s[axis]));
    const int start = static_cast<int>(rng.randint(0, s[axis] - len));
    probe_check("narrow", {a}, rng, [=] { return narrow(a, axis, start, len); });
    const int ch = static_cast<int>(rng.randint(1, d1));
    const int cw = static_cast<int>(rng.randint(1, d2));
    const int top = static_cast<int>(rng.randint(0, d1 - ch));
    const int left = static_cast<int>(rng.randint(0, d2 - cw));
    probe_check("crop_hw", {a}, rng, [=] { return crop_hw(a, top, left, ch, cw); });
  }
}

TEST_CASE("grad: reductions") {
  Rng rng(505);
  for (int rep = 0; rep < 20; ++rep) {
    Shape s = rand_shape(rng, 3, 4);
    const int axis = static_cast<int>(rng.randint(0, static_cast<int>(s.size()) - 1));
    std::vector<double> vals = random_values(rng, numel(s), -1.0, 1.0);
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[i];
    for (int i = axis + 1; i < static_cast<int>(s.size()); ++i) inner *= s[i];
    separate_axis_groups(vals, outer, s[axis], inner);
    auto a = TensorD::param(s, vals);
    check_gradients("reduce_mean", {a}, [=] { return reduce_mean(a); });
    check_gradients("reduce_sum", {a}, [=] { return mul_scalar(reduce_sum(a), 0.31); });
    probe_check("reduce_mean_axis", {a}, rng,
                [=] { return reduce_mean_axis(a, axis, true); });
    probe_check("reduce_sum_axis", {a}, rng,
                [=] { return reduce_sum_axis(a, axis, false); });
    probe_check("reduce_min_axis", {a}, rng, [=] { return reduce_min_axis(a, axis); });
  }
}

TEST_CASE("grad: conv2d") {
  Rng rng(506);
  for (int rep = 0; rep < 20; ++rep) {
    const int N = static_cast<int>(rng.randint(1, 2));
    const int C = static_cast<int>(rng.randint(1, 3));
    const int O = static_cast<int>(rng.randint(1, 3));
    const int ksz = rng.bernoulli(0.5) ? 3 : 1;
    const int stride = static_cast<int>(rng.randint(1, 2));
    const int pad = ksz == 3 ? static_cast<int>(rng.randint(0, 1)) : 0;
    const int H = static_cast<int>(rng.randint(ksz, 6));
    const int W = static_cast<int>(rng.randint(ksz, 6));
    auto x = TensorD::param({N, C, H, W}, random_values(rng, (std::int64_t)N * C * H * W, -1, 1));
    auto w = TensorD::param({O, C, ksz, ksz},
                            random_values(rng, (std::int64_t)O * C * ksz * ksz, -1, 1));
    auto bias = TensorD::param({O}, random_values(rng, O, -0.5, 0.5));
    probe_check("conv2d", {x, w, bias}, rng,
                [=] { return conv2d(x, w, bias, stride, pad); });
  }
}

TEST_CASE("grad: bilinear_resize") {
  Rng rng(507);
  for (int rep = 0; rep < 20; ++rep) {
    const int N = static_cast<int>(rng.randint(1, 2));
    const int C = static_cast<int>(rng.randint(1, 2));
    const int H = static_cast<int>(rng.randint(2, 5));
    const int W = static_cast<int>(rng.randint(2, 5));
    const int oh = static_cast<int>(rng.randint(1, 8));
    const int ow = static_cast<int>(rng.randint(1, 8));
    auto x = TensorD::param({N, C, H, W}, random_values(rng, (std::int64_t)N * C * H * W, -1, 1));
    probe_check("bilinear_resize", {x}, rng, [=] { return bilinear_resize(x, oh, ow); });
  }
}

TEST_CASE("grad: grid_sample in both input and grid") {
  Rng rng(508);
  for (int rep = 0; rep < 20; ++rep) {
    const int N = static_cast<int>(rng.randint(1, 2));
    const int C = static_cast<int>(rng.randint(1, 2));
    const int H = static_cast<int>(rng.randint(3, 5));
    const int W = static_cast<int>(rng.randint(3, 5));
    const int Hg = static_cast<int>(rng.randint(1, 3));
    const int Wg = static_cast<int>(rng.randint(1, 4));
    auto x = TensorD::param({N, C, H, W}, random_values(rng, (std::int64_t)N * C * H * W, -1, 1));
    // fractional parts kept inside (0.2, 0.8) so the step never crosses a cell
    std::vector<double> g(static_cast<std::size_t>(N) * Hg * Wg * 2);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const int limit = (i % 2 == 0) ? W : H;
      g[i] = rng.randint(0, limit - 2) + rng.uniform(0.2, 0.8);
    }
    auto grid = TensorD::param({N, Hg, Wg, 2}, g);
    probe_check("grid_sample", {x, grid}, rng, [=] { return grid_sample(x, grid); });
  }
}

TEST_CASE("grad: spec composite loss = mean(grid_sample(I, g))") {
  Rng rng(509);
  auto img = TensorD::param({1, 2, 4, 5}, random_values(rng, 40, -1.0, 1.0));
  std::vector<double> g(2 * 3 * 2);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const int limit = (i % 2 == 0) ? 5 : 4;
    g[i] = rng.randint(0, limit - 2) + rng.uniform(0.25, 0.75);
  }
  auto grid = TensorD::param({1, 2, 3, 2}, g);
  check_gradients("mean(grid_sample)", {img, grid},
                  [=] { return reduce_mean(grid_sample(img, grid)); });
}
