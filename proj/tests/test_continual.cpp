#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "mdcl/continual.hpp"
#include "plane_scene.hpp"

using namespace mdcl;
using mdcl_test::cast_values;
using mdcl_test::PlaneCamera;
using mdcl_test::render_plane;

namespace {

BufferItem<float> tagged_item(int id) {
  BufferItem<float> it;
  it.task_id = id;
  return it;
}

NetworkConfig tiny_config(bool learn_k = false) {
  NetworkConfig cfg;
  cfg.height = 16;
  cfg.width = 24;
  cfg.base_channels = 4;
  cfg.learn_intrinsics = learn_k;
  return cfg;
}

const PlaneCamera kCam{20, 20, 11.5, 7.5, 2.0};

BufferItem<float> scene_item(const NetworkConfig& cfg, int variant) {
  const int h = cfg.height, w = cfg.width;
  const double dz = 0.05 * variant;
  BufferItem<float> it;
  it.target = TensorF::from_data(
      {3, h, w}, cast_values<float>(render_plane(h, w, kCam, {0, 0, 0}, {dz, 0, 0})));
  it.sources = {
      TensorF::from_data({3, h, w}, cast_values<float>(render_plane(
                                        h, w, kCam, {0, 0.01, 0}, {0.12 + dz, 0.03, 0.02}))),
      TensorF::from_data({3, h, w}, cast_values<float>(render_plane(
                                        h, w, kCam, {0.008, 0, 0}, {-0.1 + dz, -0.02, -0.02}))),
  };
  it.task_id = 1;
  it.has_intrinsics = true;
  it.K = CameraIntrinsics<float>::from_values(
      static_cast<float>(kCam.fx), static_cast<float>(kCam.fy), static_cast<float>(kCam.cx),
      static_cast<float>(kCam.cy));
  it.depth_cap = 8.f;
  return it;
}

TrainStepConfig<float> step_config(Method m, int task_index) {
  TrainStepConfig<float> cfg;
  cfg.cl.method = m;
  cfg.cl.rehearsal_batch = 2;
  cfg.loss = LossConfig<float>{};
  cfg.min_depth = 0.5f;
  cfg.max_depth = 8.f;
  cfg.task_index = task_index;
  return cfg;
}

}  // namespace

TEST_CASE("continual: reservoir stores the first capacity items, capacity never exceeded") {
  ReplayBuffer<float> buf(5, 17);
  for (int i = 0; i < 5; ++i) buf.insert(tagged_item(i));
  REQUIRE(buf.size() == 5);
  CHECK(buf.seen_count() == 5);
  for (int i = 0; i < 5; ++i) CHECK(buf.items()[i].task_id == i);
  for (int i = 5; i < 200; ++i) {
    buf.insert(tagged_item(i));
    CHECK(buf.size() == 5);
  }
  CHECK(buf.seen_count() == 200);
}

TEST_CASE("continual: reservoir with capacity zero stays empty without error") {
  ReplayBuffer<float> buf(0, 3);
  for (int i = 0; i < 10; ++i) buf.insert(tagged_item(i));
  CHECK(buf.size() == 0);
  CHECK(buf.seen_count() == 10);
  CHECK(buf.sample_batch(4).empty());
  CHECK_THROWS_WITH_AS(buf.sample_batch(0), doctest::Contains("positive"), std::runtime_error);
}

TEST_CASE("continual: reservoir inclusion frequencies pass a chi-square uniformity check") {
  // Small-scale Monte Carlo twin of the full acceptance oracle: stream N items
  // into a capacity-c reservoir T times; each item's membership count is
  // Binomial(T, c/N), and the variance-normalized Pearson statistic over the N
  // cells should sit within 3 standard deviations of its chi-square mean.
  const int N = 400, cap = 40, trials = 600;
  std::vector<int> counts(N, 0);
  for (int t = 0; t < trials; ++t) {
    ReplayBuffer<float> buf(cap, 1000 + static_cast<std::uint64_t>(t));
    for (int i = 0; i < N; ++i) buf.insert(tagged_item(i));
    REQUIRE(buf.size() == cap);
    for (const auto& it : buf.items()) counts[static_cast<std::size_t>(it.task_id)] += 1;
  }
  const double p = static_cast<double>(cap) / N;
  const double mean = trials * p, var = trials * p * (1 - p);
  double chi2 = 0, worst = 0;
  for (int c : counts) {
    const double z = (c - mean) / std::sqrt(var);
    chi2 += z * z;
    worst = std::max(worst, std::abs(z));
  }
  const double df = N - 1;
  const double chi_z = (chi2 - df) / std::sqrt(2 * df);
  CAPTURE(chi2);
  CAPTURE(worst);
  CHECK(std::abs(chi_z) < 3.0);
  // the per-item extreme should look like the max of N near-normal draws
  CHECK(worst < 5.0);
}

TEST_CASE("continual: sample_batch replacement rules and determinism") {
  ReplayBuffer<float> one(8, 5);
  one.insert(tagged_item(42));
  auto dup = one.sample_batch(8);
  REQUIRE(dup.size() == 8);
  for (const auto& it : dup) CHECK(it.task_id == 42);

  ReplayBuffer<float> big(100, 6);
  for (int i = 0; i < 100; ++i) big.insert(tagged_item(i));
  auto batch = big.sample_batch(8);
  REQUIRE(batch.size() == 8);
  std::set<int> ids;
  for (const auto& it : batch) ids.insert(it.task_id);
  CHECK(ids.size() == 8);  // without replacement -> all distinct

  ReplayBuffer<float> a(100, 7), b(100, 7);
  for (int i = 0; i < 100; ++i) {
    a.insert(tagged_item(i));
    b.insert(tagged_item(i));
  }
  auto sa = a.sample_batch(8), sb = b.sample_batch(8);
  for (int i = 0; i < 8; ++i) CHECK(sa[i].task_id == sb[i].task_id);
}

TEST_CASE("continual: ema endpoints, contraction, and gating") {
  NetworkConfig cfg = tiny_config();
  DualModel<float> dual(cfg, 9, 0.9f, 0.5f);

  // context starts as an exact copy
  for (std::size_t i = 0; i < dual.working().params().size(); ++i) {
    auto w = dual.working().params()[i].tensor.values();
    auto c = dual.context().params()[i].tensor.values();
    CHECK(std::equal(w.begin(), w.end(), c.begin()));
  }

  // n = 0: blend is a bitwise copy of the working model
  CHECK(dual.alpha_n() == 0.f);
  for (auto& p : dual.working().params()) {
    auto v = p.tensor.values_mut();
    for (auto& x : v) x += 0.25f;
  }
  dual.ema_blend();
  for (std::size_t i = 0; i < dual.working().params().size(); ++i) {
    auto w = dual.working().params()[i].tensor.values();
    auto c = dual.context().params()[i].tensor.values();
    CHECK(std::equal(w.begin(), w.end(), c.begin()));
  }

  // scalar toy: context 1.0, working 0.0, alpha_n = 0.9 -> context 0.9
  dual.set_iteration(9);  // 1 - 1/10 = 0.9 = alpha
  CHECK(dual.alpha_n() == 0.9f);
  for (auto& p : dual.working().params()) {
    auto v = p.tensor.values_mut();
    std::fill(v.begin(), v.end(), 0.f);
  }
  for (auto& p : dual.context().params()) {
    auto v = p.tensor.values_mut();
    std::fill(v.begin(), v.end(), 1.f);
  }
  dual.ema_blend();
  for (auto& p : dual.context().params())
    for (float x : p.tensor.values()) CHECK(x == 0.9f);

  // large n saturates at alpha
  dual.set_iteration(1000000);
  CHECK(dual.alpha_n() == 0.9f);
  DualModel<float> slow(cfg, 9, 0.999f, 0.05f);
  slow.set_iteration(1000000);
  CHECK(slow.alpha_n() == 0.999f);

  // geometric contraction toward constant working params over fired blends
  double d0 = 1.0;  // |context - working| is 0.9 everywhere after the blend above
  for (auto& p : dual.context().params())
    for (float x : p.tensor.values()) d0 = std::max(d0, std::abs(static_cast<double>(x)));
  for (int k = 1; k <= 20; ++k) {
    dual.ema_blend();
    double dk = 0;
    for (auto& p : dual.context().params())
      for (float x : p.tensor.values()) dk = std::max(dk, std::abs(static_cast<double>(x)));
    CHECK(dk <= std::pow(0.9, k) * d0 * (1 + 1e-5));
  }

  // ema_update: n advances every call, blends fire on roughly nu of them
  DualModel<float> gated(cfg, 11, 0.9f, 0.5f);
  int fired = 0;
  for (int i = 0; i < 200; ++i) fired += gated.ema_update() ? 1 : 0;
  CHECK(gated.iteration() == 200);
  CHECK(fired > 60);
  CHECK(fired < 140);

  CHECK_THROWS_AS(DualModel<float>(cfg, 1, 1.0f, 0.5f), std::invalid_argument);
  CHECK_THROWS_AS(DualModel<float>(cfg, 1, 0.9f, 0.0f), std::invalid_argument);
}

TEST_CASE("continual: stc_map matches the photometric form and detaches context") {
  LossConfig<double> lc;
  auto a = TensorD::full({3, 6, 7}, 0.0);
  auto b = TensorD::full({3, 6, 7}, 1.0);
  auto m = stc_map(a, b, lc);
  REQUIRE(m.shape() == Shape({6, 7}));
  const double c1 = 1e-4;
  const double expected = 0.425 * (1.0 - c1 / (1.0 + c1)) + 0.15;
  for (double v : m.values()) {
    CHECK(std::abs(v - expected) < 1e-12);
    CHECK(std::abs(v - 0.575) < 1e-3);
  }

  // identical synthesized targets -> zero map (up to contraction jitter)
  Rng rng(31);
  std::vector<double> vals(3 * 6 * 7);
  for (auto& v : vals) v = rng.uniform(0.1, 0.9);
  auto x = TensorD::from_data({3, 6, 7}, vals);
  for (double v : stc_map(x, x, lc).values()) CHECK(std::abs(v) < 1e-6);

  // rho = 1 -> pure structural term, bitwise equal to the photometric map
  LossConfig<double> ls;
  ls.rho = 1.0;
  auto ms = stc_map(a, b, ls);
  auto ps = photometric_map(a, b, ls);
  CHECK(std::equal(ms.values().begin(), ms.values().end(), ps.values().begin()));

  CHECK_THROWS_WITH_AS(stc_map(a, TensorD::full({3, 6, 8}, 1.0), lc),
                       doctest::Contains("stc_map"), std::runtime_error);

  // gradient flows into the working branch only
  auto wa = TensorD::param({3, 4, 5}, std::vector<double>(60, 0.3));
  auto ca = TensorD::param({3, 4, 5}, std::vector<double>(60, 0.7));
  auto loss = reduce_mean(stc_map(ca, wa, lc));
  backward(loss);
  REQUIRE(wa.has_grad());
  bool any = false;
  for (double g : wa.grad()) any = any || g != 0.0;
  CHECK(any);
  CHECK_FALSE(ca.has_grad());
}

TEST_CASE("continual: crop windows stay in bounds and honor the ratio clip") {
  Rng rng(77);
  for (int i = 0; i < 2000; ++i) {
    const CropWindow c = sample_crop(13, 17, 0.5, 0.1, rng);
    CHECK(c.height >= 1);
    CHECK(c.width >= 1);
    CHECK(c.top >= 0);
    CHECK(c.left >= 0);
    CHECK(c.top + c.height <= 13);
    CHECK(c.left + c.width <= 17);
  }
  // with h = w = 1000 the extent encodes the clipped ratio exactly
  Rng wide(78);
  int full = 0, low = 0;
  for (int i = 0; i < 4000; ++i) {
    const CropWindow c = sample_crop(1000, 1000, 0.5, 0.1, wide);
    CHECK(c.height >= 100);   // r clipped at 0.1
    CHECK(c.height <= 1000);  // r clipped at 1.0
    if (c.height == 1000) ++full;
    if (c.height == 100) ++low;
  }
  CHECK(full == 0);  // r = 1 is ~5 sigma out for N(0.5, 0.1)
  CHECK(low == 0);
  // extreme means do hit the clips
  Rng hot(79);
  for (int i = 0; i < 50; ++i) CHECK(sample_crop(1000, 1000, 1.8, 0.1, hot).height == 1000);
  Rng cold(80);
  for (int i = 0; i < 50; ++i) CHECK(sample_crop(1000, 1000, -0.6, 0.1, cold).height == 100);
}

TEST_CASE("continual: constant-map crop averaging is position invariant") {
  // the Alg. 1 averaging algebra: every crop of a constant map averages to the
  // constant, so the assembled L_STC equals it too, regardless of positions
  for (double v : {0.5, 0.575}) {
    auto map = TensorD::full({24, 32}, v);
    Rng rng(91);
    for (int i = 0; i < 64; ++i) {
      const CropWindow c = sample_crop(24, 32, 0.5, 0.1, rng);
      const double m =
          reduce_mean(narrow(narrow(map, 0, c.top, c.height), 1, c.left, c.width)).item();
      if (v == 0.5)
        CHECK(m == v);  // power-of-two constant: exact under any summation order
      else
        CHECK(std::abs(m - v) < 1e-12);
    }
  }
}

TEST_CASE("continual: stc_loss vanishes for identical models and spares context grads") {
  NetworkConfig cfg = tiny_config();
  DualModel<float> dual(cfg, 21, 0.999f, 0.05f);
  std::vector<BufferItem<float>> batch = {scene_item(cfg, 0), scene_item(cfg, 1)};
  StcConfig<float> sc;
  sc.min_depth = 0.5f;
  sc.max_depth = 8.f;
  Rng crop(5);

  auto zero = stc_loss(batch, dual, sc, crop);
  CHECK(std::abs(zero.item()) <= 1e-6f);

  // perturb the working model so the maps are nonzero, then backprop
  for (auto& p : dual.working().params())
    if (p.name == "depth.head0.b") {
      auto v = p.tensor.values_mut();
      for (auto& x : v) x += 0.4f;
    }
  auto loss = stc_loss(batch, dual, sc, crop);
  CHECK(loss.item() > 0.f);
  backward(loss);

  bool any_working = false;
  for (const auto& p : dual.working().params())
    if (p.tensor.has_grad())
      for (float g : p.tensor.grad()) any_working = any_working || g != 0.f;
  CHECK(any_working);
  for (const auto& p : dual.context().params()) {
    if (!p.tensor.has_grad()) continue;
    for (float g : p.tensor.grad()) CHECK(g == 0.f);
  }

  CHECK(stc_loss(batch, dual, sc, crop).item() >= 0.f);
  CHECK_THROWS_WITH_AS(stc_loss({}, dual, sc, crop), doctest::Contains("empty"),
                       std::runtime_error);
}

TEST_CASE("continual: warmup makes task-1 MonoDepthCL identical to ER") {
  NetworkConfig cfg = tiny_config();
  std::vector<BufferItem<float>> batch = {scene_item(cfg, 0), scene_item(cfg, 2)};

  auto run = [&](Method m) {
    DualModel<float> dual(cfg, 33, 0.999f, 0.05f);
    ReplayBuffer<float> buf(16, 33);
    Adam<float> opt(optimizer_params(dual.working()), 1e-4f);
    Rng crop(33);
    TrainStepConfig<float> sc = step_config(m, 1);
    sc.cl.warmup = true;
    std::vector<float> totals;
    for (int i = 0; i < 3; ++i) {
      auto l = train_step(batch, buf, dual, opt, sc, crop);
      totals.push_back(l.total);
      CHECK_FALSE(l.stc_active);
    }
    // fold in the resulting working params so the comparison covers the
    // optimizer trajectory, not just the reported losses
    for (const auto& p : dual.working().params())
      totals.push_back(p.tensor.values()[0]);
    return totals;
  };

  auto mdcl = run(Method::MonoDepthCL);
  auto er = run(Method::ER);
  REQUIRE(mdcl.size() == er.size());
  for (std::size_t i = 0; i < mdcl.size(); ++i) CHECK(mdcl[i] == er[i]);
}

TEST_CASE("continual: per-method buffer, ema, and loss-term semantics") {
  NetworkConfig cfg = tiny_config();
  std::vector<BufferItem<float>> batch = {scene_item(cfg, 0), scene_item(cfg, 1)};

  // NCT never touches the buffer
  {
    DualModel<float> dual(cfg, 41, 0.999f, 0.05f);
    ReplayBuffer<float> buf(16, 41);
    Adam<float> opt(optimizer_params(dual.working()), 1e-4f);
    Rng crop(41);
    auto sc = step_config(Method::NCT, 1);
    for (int i = 0; i < 2; ++i) train_step(batch, buf, dual, opt, sc, crop);
    CHECK(buf.seen_count() == 0);
    CHECK(dual.iteration() == 0);  // no EMA bookkeeping either
  }

  // ER inserts every stream sample; first step trains on X_B alone
  {
    DualModel<float> dual(cfg, 41, 0.999f, 0.05f);
    ReplayBuffer<float> buf(16, 41);
    Adam<float> opt(optimizer_params(dual.working()), 1e-4f);
    Rng crop(41);
    auto sc = step_config(Method::ER, 1);
    auto first = train_step(batch, buf, dual, opt, sc, crop);
    CHECK(buf.seen_count() == 2);

    DualModel<float> nct(cfg, 41, 0.999f, 0.05f);
    ReplayBuffer<float> nbuf(16, 41);
    Adam<float> nopt(optimizer_params(nct.working()), 1e-4f);
    auto nsc = step_config(Method::NCT, 1);
    auto nfirst = train_step(batch, nbuf, nct, nopt, nsc, crop);
    CHECK(first.depth == nfirst.depth);
  }

  // MonoDepthCL on task 2: depth + STC terms, total = depth + beta * stc
  {
    DualModel<float> dual(cfg, 41, 0.999f, 0.5f);
    ReplayBuffer<float> buf(16, 41);
    Adam<float> opt(optimizer_params(dual.working()), 1e-4f);
    Rng crop(41);
    auto sc1 = step_config(Method::MonoDepthCL, 1);
    train_step(batch, buf, dual, opt, sc1, crop);  // fills the buffer (task 1)
    auto sc2 = step_config(Method::MonoDepthCL, 2);
    auto l = train_step(batch, buf, dual, opt, sc2, crop);
    CHECK(l.stc_active);
    CHECK(l.stc >= 0.f);
    CHECK(l.total == doctest::Approx(l.depth + 0.1f * l.stc).epsilon(1e-6));
    CHECK(dual.iteration() == 2);
  }

  // beta = 0 drops the STC term entirely
  {
    DualModel<float> dual(cfg, 43, 0.999f, 0.5f);
    ReplayBuffer<float> buf(16, 43);
    Adam<float> opt(optimizer_params(dual.working()), 1e-4f);
    Rng crop(43);
    auto sc = step_config(Method::MonoDepthCL, 2);
    sc.cl.beta = 0.f;
    train_step(batch, buf, dual, opt, sc, crop);
    auto l = train_step(batch, buf, dual, opt, sc, crop);
    CHECK_FALSE(l.stc_active);
    CHECK(l.total == l.depth);
  }

  // capacity 0 degrades rehearsal methods to NCT with a one-shot warning
  {
    DualModel<float> dual(cfg, 41, 0.999f, 0.05f);
    ReplayBuffer<float> buf(0, 41);
    Adam<float> opt(optimizer_params(dual.working()), 1e-4f);
    Rng crop(41);
    auto sc = step_config(Method::MonoDepthCL, 2);
    auto l = train_step(batch, buf, dual, opt, sc, crop);
    CHECK_FALSE(l.stc_active);
    CHECK(buf.seen_count() == 0);
    CHECK(buf.degrade_warned);
    CHECK(dual.iteration() == 0);  // degraded all the way to NCT: no EMA
  }

  // ContextDepth: EMA bookkeeping advances, evaluation picks the context model
  {
    DualModel<float> dual(cfg, 41, 0.999f, 0.5f);
    ReplayBuffer<float> buf(16, 41);
    Adam<float> opt(optimizer_params(dual.working()), 1e-4f);
    Rng crop(41);
    auto sc = step_config(Method::ContextDepth, 1);
    for (int i = 0; i < 4; ++i) train_step(batch, buf, dual, opt, sc, crop);
    CHECK(dual.iteration() == 4);
    CHECK(&eval_model(dual, Method::ContextDepth) == &dual.context());
    CHECK(&eval_model(dual, Method::MonoDepthCL) == &dual.working());
    CHECK(&eval_model(dual, Method::NCT) == &dual.working());
  }
}

TEST_CASE("continual: method names round-trip and reject unknowns") {
  for (Method m : {Method::NCT, Method::ER, Method::ContextDepth, Method::MonoDepthCL,
                   Method::Joint})
    CHECK(method_from_string(method_name(m)) == m);
  CHECK_THROWS_WITH_AS(method_from_string("SGDReplay"), doctest::Contains("unknown method"),
                       std::invalid_argument);
  CHECK(method_uses_rehearsal(Method::ER));
  CHECK_FALSE(method_uses_rehearsal(Method::Joint));
  CHECK(method_uses_ema(Method::ContextDepth));
  CHECK_FALSE(method_uses_ema(Method::ER));
}
