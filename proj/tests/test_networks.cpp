#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "mdcl/losses.hpp"
#include "mdcl/networks.hpp"
#include "plane_scene.hpp"

using namespace mdcl;
using mdcl_test::cast_values;
using mdcl_test::PlaneCamera;
using mdcl_test::render_plane;

namespace {

NetworkConfig tiny_config(bool learn_k = false) {
  NetworkConfig cfg;
  cfg.height = 16;
  cfg.width = 24;
  cfg.base_channels = 4;
  cfg.learn_intrinsics = learn_k;
  return cfg;
}

template <typename T>
void set_param(ModelParams<T>& m, const std::string& name, const std::vector<T>& vals) {
  for (auto& p : m.params())
    if (p.name == name) {
      REQUIRE(static_cast<std::size_t>(p.tensor.size()) == vals.size());
      auto out = p.tensor.values_mut();
      std::copy(vals.begin(), vals.end(), out.begin());
      return;
    }
  FAIL("no parameter named ", name);
}

template <typename T>
void zero_param(ModelParams<T>& m, const std::string& name) {
  for (auto& p : m.params())
    if (p.name == name) {
      auto out = p.tensor.values_mut();
      std::fill(out.begin(), out.end(), T(0));
      return;
    }
  FAIL("no parameter named ", name);
}

template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  auto va = a.values(), vb = b.values();
  return std::equal(va.begin(), va.end(), vb.begin());
}

}  // namespace

TEST_CASE("networks: config validation") {
  NetworkConfig cfg;
  cfg.height = 60;  // not divisible by 8
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("divisible by 8"),
                       std::invalid_argument);
  cfg.height = 64;
  cfg.width = 90;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("divisible by 8"),
                       std::invalid_argument);
  cfg.width = 96;
  cfg.base_channels = 3;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("base_channels"),
                       std::invalid_argument);
  cfg.base_channels = 2;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.base_channels = 16;
  CHECK_NOTHROW(cfg.validate());
  CHECK_THROWS_AS(ModelParams<float>(NetworkConfig{60, 96, 16, false}, 1),
                  std::invalid_argument);
}

TEST_CASE("networks: parameter inventory matches the closed-form count") {
  NetworkConfig cfg;  // 64x96, base 16
  ModelParams<float> m(cfg, 11);
  std::int64_t depth = 0, pose = 0;
  for (const auto& p : m.params()) {
    if (p.name.rfind("depth.", 0) == 0) depth += p.tensor.size();
    if (p.name.rfind("pose.", 0) == 0) pose += p.tensor.size();
  }
  // Frozen totals for the C=16 topology: a compact ~50k-parameter depth net.
  CHECK(depth == 54756);
  CHECK(pose == 24406);

  NetworkConfig li = cfg;
  li.learn_intrinsics = true;
  ModelParams<float> mk(li, 11);
  std::int64_t pose_k = 0;
  for (const auto& p : mk.params())
    if (p.name.rfind("pose.", 0) == 0) pose_k += p.tensor.size();
  CHECK(pose_k == 24406 + 260);  // 4x(4C)x1x1 weights + 4 biases

  // biases start at zero, weights do not
  const auto& w = m.get("depth.enc1.w");
  const auto& b = m.get("depth.enc1.b");
  CHECK(std::any_of(w.values().begin(), w.values().end(), [](float v) { return v != 0.f; }));
  CHECK(std::all_of(b.values().begin(), b.values().end(), [](float v) { return v == 0.f; }));
  CHECK_THROWS_WITH_AS(m.get("pose.intr.w"), doctest::Contains("no parameter"),
                       std::invalid_argument);
}

TEST_CASE("networks: init is seed-deterministic and seeds differ") {
  NetworkConfig cfg = tiny_config();
  ModelParams<float> a(cfg, 5), b(cfg, 5), c(cfg, 6);
  bool all_eq = true, any_diff = false;
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    all_eq = all_eq && bitwise_equal(a.params()[i].tensor, b.params()[i].tensor);
    any_diff = any_diff || !bitwise_equal(a.params()[i].tensor, c.params()[i].tensor);
  }
  CHECK(all_eq);
  CHECK(any_diff);
}

TEST_CASE("networks: depth forward emits four full-resolution maps in (0,1)") {
  NetworkConfig cfg = tiny_config();
  ModelParams<float> m(cfg, 2);
  PlaneCamera cam{20, 20, 11.5, 7.5, 2.0};
  auto img = TensorF::from_data(
      {3, cfg.height, cfg.width},
      cast_values<float>(render_plane(cfg.height, cfg.width, cam, {0, 0, 0}, {0, 0, 0})));
  auto disps = depth_forward(img, m);
  REQUIRE(disps.size() == 4);
  for (const auto& d : disps) {
    CHECK(d.shape() == Shape({cfg.height, cfg.width}));
    for (float v : d.values()) {
      CHECK(v > 0.f);
      CHECK(v < 1.f);
    }
  }
  // coarsest-first ordering: scale 3 is piecewise-smoother than scale 0
  // (it only has H/8 x W/8 distinct head outputs before upsampling), so its
  // total variation along a row must be no larger.
  auto tv = [&](const Tensor<float>& d) {
    double s = 0;
    auto v = d.values();
    for (int y = 0; y < cfg.height; ++y)
      for (int x = 0; x + 1 < cfg.width; ++x)
        s += std::abs(double(v[y * cfg.width + x + 1]) - double(v[y * cfg.width + x]));
    return s;
  };
  CHECK(tv(disps[0]) < tv(disps[3]) + 1e-6);

  CHECK_THROWS_WITH_AS(depth_forward(TensorF::zeros({3, 8, 8}), m),
                       doctest::Contains("depth_forward"), std::runtime_error);
}

TEST_CASE("networks: forward passes are deterministic and clone matches bitwise") {
  NetworkConfig cfg = tiny_config(true);
  ModelParams<float> m(cfg, 4);
  PlaneCamera cam{20, 20, 11.5, 7.5, 2.0};
  auto a = TensorF::from_data(
      {3, cfg.height, cfg.width},
      cast_values<float>(render_plane(cfg.height, cfg.width, cam, {0, 0, 0}, {0, 0, 0})));
  auto b = TensorF::from_data({3, cfg.height, cfg.width},
                              cast_values<float>(render_plane(cfg.height, cfg.width, cam,
                                                              {0, 0.01, 0}, {0.1, 0, 0})));

  auto d1 = depth_forward(a, m), d2 = depth_forward(a, m);
  for (int i = 0; i < 4; ++i) CHECK(bitwise_equal(d1[i], d2[i]));

  ModelParams<float> mc = m.clone();
  auto d3 = depth_forward(a, mc);
  for (int i = 0; i < 4; ++i) CHECK(bitwise_equal(d1[i], d3[i]));

  auto p1 = pose_forward(b, a, m), p2 = pose_forward(b, a, mc);
  CHECK(bitwise_equal(p1.pose.axis_angle, p2.pose.axis_angle));
  CHECK(bitwise_equal(p1.pose.translation, p2.pose.translation));
  REQUIRE(p1.has_intrinsics);
  CHECK(bitwise_equal(p1.intrinsics.fx, p2.intrinsics.fx));

  // clone is a deep copy: mutating the clone leaves the original untouched
  auto w = mc.params()[0].tensor.values_mut();
  w[0] += 1.f;
  CHECK(m.params()[0].tensor.values()[0] != mc.params()[0].tensor.values()[0]);
}

TEST_CASE("networks: pose head bias maps straight to scaled twist") {
  NetworkConfig cfg = tiny_config();
  ModelParams<float> m(cfg, 3);
  zero_param(m, "pose.head.w");
  set_param<float>(m, "pose.head.b", {1, 0, 0, 0, 0.5, 0});
  auto img = TensorF::full({3, cfg.height, cfg.width}, 0.5f);
  auto pred = pose_forward(img, img, m);
  auto aa = pred.pose.axis_angle.values();
  auto t = pred.pose.translation.values();
  // raw head output (1,0,0 | 0,0.5,0) scaled by 0.01
  CHECK(aa[0] == 0.01f);
  CHECK(aa[1] == 0.f);
  CHECK(aa[2] == 0.f);
  CHECK(t[0] == 0.f);
  CHECK(t[1] == 0.005f);
  CHECK(t[2] == 0.f);
  CHECK_FALSE(pred.has_intrinsics);
}

TEST_CASE("networks: zeroed intrinsics head gives the softplus/sigmoid defaults") {
  NetworkConfig cfg;  // 64x96
  cfg.learn_intrinsics = true;
  ModelParams<float> m(cfg, 3);
  zero_param(m, "pose.intr.w");
  zero_param(m, "pose.intr.b");
  auto img = TensorF::full({3, cfg.height, cfg.width}, 0.25f);
  auto pred = pose_forward(img, img, m);
  REQUIRE(pred.has_intrinsics);
  const double ln2 = std::log(2.0);
  CHECK(pred.intrinsics.fx.item() == doctest::Approx(96.0 * ln2).epsilon(1e-6));
  CHECK(pred.intrinsics.fy.item() == doctest::Approx(64.0 * ln2).epsilon(1e-6));
  CHECK(std::abs(pred.intrinsics.fx.item() - 66.54) < 0.01);
  CHECK(pred.intrinsics.cx.item() == 48.f);
  CHECK(pred.intrinsics.cy.item() == 32.f);
}

TEST_CASE("networks: every parameter receives gradient from the task loss") {
  NetworkConfig cfg = tiny_config(true);
  ModelParams<float> m(cfg, 7);
  const int h = cfg.height, w = cfg.width;
  PlaneCamera cam{20, 20, 11.5, 7.5, 2.0};
  auto target =
      TensorF::from_data({3, h, w}, cast_values<float>(render_plane(h, w, cam, {0, 0, 0}, {0, 0, 0})));
  auto src0 = TensorF::from_data(
      {3, h, w}, cast_values<float>(render_plane(h, w, cam, {0, 0.01, 0}, {0.12, 0.03, 0.02})));
  auto src1 = TensorF::from_data(
      {3, h, w}, cast_values<float>(render_plane(h, w, cam, {0.008, 0, 0}, {-0.1, -0.02, -0.02})));

  DepthSampleInputs<float> s;
  s.target = target;
  s.sources = {src0, src1};
  s.disps = depth_forward(target, m);
  auto pp0 = pose_forward(src0, target, m);
  auto pp1 = pose_forward(src1, target, m);
  s.poses = {pp0.pose, pp1.pose};
  REQUIRE(pp0.has_intrinsics);
  s.K = pp0.intrinsics;
  s.min_depth = 0.5f;
  s.max_depth = 8.f;

  LossConfig<float> lc;
  auto loss = depth_task_loss<float>({s}, lc);
  REQUIRE(std::isfinite(loss.item()));
  backward(loss);

  for (const auto& p : m.params()) {
    CAPTURE(p.name);
    REQUIRE(p.tensor.has_grad());
    float linf = 0.f;
    for (float g : p.tensor.grad()) {
      REQUIRE(std::isfinite(g));
      linf = std::max(linf, std::abs(g));
    }
    CHECK(linf > 0.f);
  }
}

TEST_CASE("networks: checkpoint round-trip is bitwise and errors are descriptive") {
  const std::string path = "/tmp/mdcl_test_ckpt.bin";
  NetworkConfig cfg = tiny_config(true);
  ModelParams<float> m(cfg, 3);

  std::vector<CheckpointTensor> out;
  append_model_tensors(m, "working/", out);
  save_checkpoint(path, R"({"alpha":0.999,"task":2})", out);

  std::string meta;
  std::vector<CheckpointTensor> in;
  load_checkpoint(path, meta, in);
  CHECK(meta.find("0.999") != std::string::npos);
  REQUIRE(in.size() == out.size());

  ModelParams<float> m2(cfg, 99);
  restore_model_tensors(m2, "working/", in);
  for (std::size_t i = 0; i < m.params().size(); ++i)
    CHECK(bitwise_equal(m.params()[i].tensor, m2.params()[i].tensor));

  // wrong prefix -> missing tensor
  ModelParams<float> m3(cfg, 99);
  CHECK_THROWS_WITH_AS(restore_model_tensors(m3, "context/", in),
                       doctest::Contains("missing tensor"), std::runtime_error);

  // bad magic
  {
    std::ofstream os("/tmp/mdcl_test_bad.bin", std::ios::binary);
    os << "NOTACKPT__garbage";
  }
  CHECK_THROWS_WITH_AS(load_checkpoint("/tmp/mdcl_test_bad.bin", meta, in),
                       doctest::Contains("bad magic"), std::runtime_error);

  // truncated payload
  {
    std::ifstream is(path, std::ios::binary);
    std::string all((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    std::ofstream os("/tmp/mdcl_test_trunc.bin", std::ios::binary);
    os.write(all.data(), static_cast<std::streamsize>(all.size() - 5));
  }
  CHECK_THROWS_WITH_AS(load_checkpoint("/tmp/mdcl_test_trunc.bin", meta, in),
                       doctest::Contains("truncated"), std::runtime_error);

  CHECK_THROWS_WITH_AS(load_checkpoint("/tmp/mdcl_no_such_file.bin", meta, in),
                       doctest::Contains("cannot open"), std::runtime_error);
  std::remove(path.c_str());
  std::remove("/tmp/mdcl_test_bad.bin");
  std::remove("/tmp/mdcl_test_trunc.bin");
}
