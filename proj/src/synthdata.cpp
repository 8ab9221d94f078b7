#include "mdcl/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "json.hpp"
#include "mdcl/rng.hpp"

namespace mdcl {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

// Placement margins. Rays tilt by at most ~0.11 rad of rotation against a
// principal-point offset of <= 5% and focals >= 0.7x the image size, so the
// world-z to camera-depth ratio stays within [1/1.15, 1/0.85]. Keeping plane
// depths inside [1.15 d_min + Z, 0.85 d_max - Z] for translation budget
// Z = 6 * trans_std therefore keeps every rendered depth in [d_min, d_max].
constexpr double kNearMargin = 1.15;
constexpr double kFarMargin = 0.85;
constexpr double kMaxRotStd = 0.01;
constexpr int kWavesPerPlane = 5;

double placement_lo(const SceneSpec& s) { return kNearMargin * s.d_min + 6 * s.trans_std; }
double placement_hi(const SceneSpec& s) { return kFarMargin * s.d_max - 6 * s.trans_std; }

using Mat3 = std::array<double, 9>;

Mat3 rotation_of(const std::array<double, 3>& aa) {
  double theta = std::sqrt(aa[0] * aa[0] + aa[1] * aa[1] + aa[2] * aa[2]);
  double kx = 0, ky = 0, kz = 0;
  if (theta > 0) {
    kx = aa[0] / theta;
    ky = aa[1] / theta;
    kz = aa[2] / theta;
  }
  double c = std::cos(theta), s = std::sin(theta), v = 1 - c;
  return {c + kx * kx * v,      kx * ky * v - kz * s, kx * kz * v + ky * s,
          ky * kx * v + kz * s, c + ky * ky * v,      ky * kz * v - kx * s,
          kz * kx * v - ky * s, kz * ky * v + kx * s, c + kz * kz * v};
}

std::array<double, 3> mat_vec(const Mat3& m, const std::array<double, 3>& x) {
  return {m[0] * x[0] + m[1] * x[1] + m[2] * x[2], m[3] * x[0] + m[4] * x[1] + m[5] * x[2],
          m[6] * x[0] + m[7] * x[1] + m[8] * x[2]};
}

std::array<double, 3> mat_t_vec(const Mat3& m, const std::array<double, 3>& x) {
  return {m[0] * x[0] + m[3] * x[1] + m[6] * x[2], m[1] * x[0] + m[4] * x[1] + m[7] * x[2],
          m[2] * x[0] + m[5] * x[1] + m[8] * x[2]};
}

Mat3 mat_t_mat(const Mat3& a, const Mat3& b) {  // a^T b
  Mat3 r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      r[3 * i + j] = a[i] * b[j] + a[3 + i] * b[3 + j] + a[6 + i] * b[6 + j];
  return r;
}

// Log map for the small rotations used here (theta far from pi).
std::array<double, 3> axis_angle_of(const Mat3& r) {
  double tr = r[0] + r[4] + r[8];
  double c = std::clamp((tr - 1.0) / 2.0, -1.0, 1.0);
  double theta = std::acos(c);
  std::array<double, 3> skew = {r[7] - r[5], r[2] - r[6], r[3] - r[1]};
  double scale = 0.5;
  if (theta > 1e-9) scale = theta / (2.0 * std::sin(theta));
  return {scale * skew[0], scale * skew[1], scale * skew[2]};
}

struct Hit {
  int plane = -1;
  double depth = 0;  // camera-frame z
  double x = 0, y = 0;  // world coordinates on the plane
};

// Planes are sorted by world z, and every forward ray shares the positive
// direction-z sign, so the first intersected plane in order is the nearest.
Hit trace(const SceneGeometry& geom, const CameraState& cam, const Mat3& rot, double dx,
          double dy) {
  std::array<double, 3> dir = mat_vec(rot, {dx, dy, 1.0});
  Hit hit;
  for (std::size_t k = 0; k < geom.planes.size(); ++k) {
    const PlaneDef& p = geom.planes[k];
    if (cam.pos[2] >= p.z || dir[2] <= 0) continue;
    double lam = (p.z - cam.pos[2]) / dir[2];
    double x = cam.pos[0] + lam * dir[0];
    double y = cam.pos[1] + lam * dir[1];
    if (!p.infinite &&
        (std::abs(x - p.cx) > p.half_w || std::abs(y - p.cy) > p.half_h))
      continue;
    hit.plane = static_cast<int>(k);
    hit.depth = lam;
    hit.x = x;
    hit.y = y;
    break;
  }
  return hit;
}

std::array<double, 3> shade(const PlaneDef& p, double x, double y) {
  double v = 0.5;
  for (const PlaneDef::Wave& w : p.waves) v += w.amp * std::sin(w.wx * x + w.wy * y + w.phase);
  return {p.tint[0] * v, p.tint[1] * v, p.tint[2] * v};
}

double clamped_normal(Rng& rng, double stddev) {
  return std::clamp(rng.normal(0.0, stddev), -3.0 * stddev, 3.0 * stddev);
}

std::string sample_file(std::int64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sample_%06lld.bin", static_cast<long long>(index));
  return buf;
}

void put_f32_le(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  out.push_back(static_cast<char>(bits & 0xff));
  out.push_back(static_cast<char>((bits >> 8) & 0xff));
  out.push_back(static_cast<char>((bits >> 16) & 0xff));
  out.push_back(static_cast<char>((bits >> 24) & 0xff));
}

float get_f32_le(const unsigned char* p) {
  std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                       (static_cast<std::uint32_t>(p[2]) << 16) |
                       (static_cast<std::uint32_t>(p[3]) << 24);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

void atomic_write(const fs::path& path, const std::string& bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

void append_span(std::string& out, std::span<const float> v) {
  for (float x : v) put_f32_le(out, x);
}

}  // namespace

void SceneSpec::validate() const {
  if (height <= 0 || width <= 0) throw std::invalid_argument("scene spec: image size must be positive");
  if (!(d_min > 0) || !(d_min < d_max))
    throw std::invalid_argument("scene spec: need 0 < d_min < d_max");
  if (plane_count < 1) throw std::invalid_argument("scene spec: need at least one plane");
  if (!(tex_freq_lo > 0) || !(tex_freq_lo <= tex_freq_hi) || tex_freq_hi > 0.12)
    throw std::invalid_argument("scene spec: texture band must satisfy 0 < lo <= hi <= 0.12");
  if (!(brightness > 0) || brightness > 1)
    throw std::invalid_argument("scene spec: brightness gain must lie in (0, 1]");
  if (fx < 0.7 * width || fy < 0.7 * height)
    throw std::invalid_argument("scene spec: focal lengths too short for the depth guarantee");
  if (std::abs(cx - 0.5 * width) > 0.05 * width || std::abs(cy - 0.5 * height) > 0.05 * height)
    throw std::invalid_argument("scene spec: principal point too far from the image center");
  if (trans_std < 0 || rot_std < 0 || rot_std > kMaxRotStd)
    throw std::invalid_argument("scene spec: motion stds must be >= 0 with rot_std <= 0.01");
  if (!(placement_lo(*this) < placement_hi(*this)))
    throw std::invalid_argument("scene spec: depth range too tight for the motion budget");
}

SceneGeometry build_scene(const SceneSpec& spec) {
  spec.validate();
  Rng rng = Rng::stream(spec.seed, "scene");
  double z_lo = placement_lo(spec), z_hi = placement_hi(spec);
  double focal = std::min(spec.fx, spec.fy);
  double tan_x = spec.width / (2.0 * spec.fx), tan_y = spec.height / (2.0 * spec.fy);

  SceneGeometry geom;
  auto texture = [&](PlaneDef& p) {
    for (int c = 0; c < 3; ++c) p.tint[c] = rng.uniform(0.55, 1.0);
    std::array<double, kWavesPerPlane> freq, dir, phase, weight;
    double total = 0;
    for (int m = 0; m < kWavesPerPlane; ++m) {
      freq[m] = std::exp(rng.uniform(std::log(spec.tex_freq_lo), std::log(spec.tex_freq_hi)));
      dir[m] = rng.uniform(0.0, 2.0 * std::numbers::pi);
      phase[m] = rng.uniform(0.0, 2.0 * std::numbers::pi);
      weight[m] = rng.uniform(0.5, 1.0);
      total += weight[m];
    }
    for (int m = 0; m < kWavesPerPlane; ++m) {
      // Pixel-band frequency to world cycles at this plane's depth; using the
      // smaller focal keeps the on-screen frequency under the band cap along
      // both axes.
      double w = 2.0 * std::numbers::pi * freq[m] * focal / p.z;
      p.waves.push_back({w * std::cos(dir[m]), w * std::sin(dir[m]),
                         0.45 * spec.brightness * weight[m] / total, phase[m]});
    }
  };

  for (int k = 0; k + 1 < spec.plane_count; ++k) {
    PlaneDef p;
    p.z = std::exp(rng.uniform(std::log(z_lo), std::log(z_lo + 0.95 * (z_hi - z_lo))));
    p.half_w = rng.uniform(0.25, 0.8) * p.z * tan_x;
    p.half_h = rng.uniform(0.25, 0.8) * p.z * tan_y;
    p.cx = rng.uniform(-0.6, 0.6) * p.z * tan_x;
    p.cy = rng.uniform(-0.6, 0.6) * p.z * tan_y;
    texture(p);
    geom.planes.push_back(std::move(p));
  }
  PlaneDef bg;
  bg.z = z_hi;
  bg.infinite = true;
  texture(bg);
  geom.planes.push_back(std::move(bg));

  std::sort(geom.planes.begin(), geom.planes.end(),
            [](const PlaneDef& a, const PlaneDef& b) { return a.z < b.z; });
  return geom;
}

RenderedFrame render_frame(const SceneGeometry& geom, const SceneSpec& spec,
                           const CameraState& cam) {
  if (geom.planes.empty()) throw std::invalid_argument("render_frame: empty scene");
  double z_back = geom.planes.back().z;
  if (cam.pos[2] >= z_back)
    throw std::invalid_argument("render_frame: camera is at or behind every plane");

  int h = spec.height, w = spec.width;
  Mat3 rot = rotation_of(cam.aa);
  std::vector<float> image(static_cast<std::size_t>(3) * h * w);
  std::vector<float> depth(static_cast<std::size_t>(h) * w);
  std::vector<int> ids(static_cast<std::size_t>(h) * w);

  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      Hit hit = trace(geom, cam, rot, (u - spec.cx) / spec.fx, (v - spec.cy) / spec.fy);
      if (hit.plane < 0)
        throw std::invalid_argument("render_frame: ray escapes the scene (rotation too large)");
      std::size_t px = static_cast<std::size_t>(v) * w + u;
      std::array<double, 3> rgb = shade(geom.planes[hit.plane], hit.x, hit.y);
      for (int c = 0; c < 3; ++c)
        image[static_cast<std::size_t>(c) * h * w + px] = static_cast<float>(rgb[c]);
      depth[px] = static_cast<float>(hit.depth);
      ids[px] = hit.plane;
    }
  }
  return {TensorF::from_data({3, h, w}, std::move(image)),
          TensorF::from_data({h, w}, std::move(depth)), std::move(ids)};
}

int plane_id_at(const SceneGeometry& geom, const SceneSpec& spec, const CameraState& cam,
                double u, double v) {
  Mat3 rot = rotation_of(cam.aa);
  return trace(geom, cam, rot, (u - spec.cx) / spec.fx, (v - spec.cy) / spec.fy).plane;
}

Pose<float> relative_pose(const CameraState& from, const CameraState& to) {
  Mat3 r_from = rotation_of(from.aa), r_to = rotation_of(to.aa);
  Mat3 rel = mat_t_mat(r_to, r_from);
  std::array<double, 3> diff = {from.pos[0] - to.pos[0], from.pos[1] - to.pos[1],
                                from.pos[2] - to.pos[2]};
  std::array<double, 3> t = mat_t_vec(r_to, diff);
  std::array<double, 3> aa = axis_angle_of(rel);
  return {TensorF::from_data({3}, {static_cast<float>(aa[0]), static_cast<float>(aa[1]),
                                   static_cast<float>(aa[2])}),
          TensorF::from_data({3}, {static_cast<float>(t[0]), static_cast<float>(t[1]),
                                   static_cast<float>(t[2])})};
}

SampleStates sample_camera_states(const SceneSpec& spec, std::int64_t index) {
  Rng rng = Rng::stream(spec.seed, "sample." + std::to_string(index));
  auto draw_state = [&](const CameraState* base) {
    CameraState s;
    for (int i = 0; i < 3; ++i)
      s.pos[i] = (base ? base->pos[i] : 0.0) + clamped_normal(rng, spec.trans_std);
    for (int i = 0; i < 3; ++i)
      s.aa[i] = (base ? base->aa[i] : 0.0) + clamped_normal(rng, spec.rot_std);
    return s;
  };
  SampleStates states;
  states.target = draw_state(nullptr);
  states.prev = draw_state(&states.target);
  states.next = draw_state(&states.target);
  return states;
}

std::vector<Triplet> generate_task(const SceneSpec& spec, std::int64_t n_samples) {
  if (n_samples < 0) throw std::invalid_argument("generate_task: negative sample count");
  SceneGeometry geom = build_scene(spec);
  std::vector<Triplet> out;
  out.reserve(static_cast<std::size_t>(n_samples));
  for (std::int64_t i = 0; i < n_samples; ++i) {
    SampleStates st = sample_camera_states(spec, i);
    RenderedFrame prev = render_frame(geom, spec, st.prev);
    RenderedFrame target = render_frame(geom, spec, st.target);
    RenderedFrame next = render_frame(geom, spec, st.next);
    Triplet t;
    t.prev = prev.image;
    t.target = target.image;
    t.next = next.image;
    t.depth = target.depth;
    auto pack = [](const Pose<float>& p, std::array<float, 6>& dst) {
      std::span<const float> aa = p.axis_angle.values(), tr = p.translation.values();
      for (int i = 0; i < 3; ++i) dst[i] = aa[i];
      for (int i = 0; i < 3; ++i) dst[3 + i] = tr[i];
    };
    pack(relative_pose(st.target, st.prev), t.pose_to_prev);
    pack(relative_pose(st.target, st.next), t.pose_to_next);
    out.push_back(std::move(t));
  }
  return out;
}

WarpConsistencyCounts warp_consistency_counts(const SceneGeometry& geom, const SceneSpec& spec,
                                              const CameraState& target_cam,
                                              const CameraState& source_cam,
                                              double db_threshold) {
  RenderedFrame target = render_frame(geom, spec, target_cam);
  RenderedFrame source = render_frame(geom, spec, source_cam);
  CameraIntrinsics<float> K = CameraIntrinsics<float>::from_values(
      static_cast<float>(spec.fx), static_cast<float>(spec.fy), static_cast<float>(spec.cx),
      static_cast<float>(spec.cy));
  TensorF warped = view_synthesis(source.image, target.depth, relative_pose(target_cam, source_cam), K);

  Mat3 r_t = rotation_of(target_cam.aa), r_s = rotation_of(source_cam.aa);
  Mat3 rel = mat_t_mat(r_s, r_t);
  std::array<double, 3> t_rel = mat_t_vec(
      r_s, {target_cam.pos[0] - source_cam.pos[0], target_cam.pos[1] - source_cam.pos[1],
            target_cam.pos[2] - source_cam.pos[2]});

  int h = spec.height, w = spec.width;
  std::span<const float> warped_v = warped.values(), target_v = target.image.values();
  std::span<const float> depth_v = target.depth.values();
  double mse_cap = std::pow(10.0, -db_threshold / 10.0);
  std::int64_t valid = 0, ok = 0;
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      std::size_t px = static_cast<std::size_t>(v) * w + u;
      double d = depth_v[px];
      std::array<double, 3> xc = {d * (u - spec.cx) / spec.fx, d * (v - spec.cy) / spec.fy, d};
      std::array<double, 3> xs = mat_vec(rel, xc);
      for (int i = 0; i < 3; ++i) xs[i] += t_rel[i];
      if (xs[2] <= 0) continue;
      double us = spec.fx * xs[0] / xs[2] + spec.cx;
      double vs = spec.fy * xs[1] / xs[2] + spec.cy;
      if (us < 0 || us > w - 1 || vs < 0 || vs > h - 1) continue;
      // All four interpolation taps must see the plane this target pixel
      // sees; anything else is an analytically identified occlusion or
      // boundary mix.
      int u0 = static_cast<int>(std::floor(us)), v0 = static_cast<int>(std::floor(vs));
      int u1 = std::min(u0 + 1, w - 1), v1 = std::min(v0 + 1, h - 1);
      int want = target.plane_ids[px];
      bool same = true;
      for (int iv : {v0, v1})
        for (int iu : {u0, u1})
          same = same && source.plane_ids[static_cast<std::size_t>(iv) * w + iu] == want;
      if (!same) continue;
      ++valid;
      double mse = 0;
      for (int c = 0; c < 3; ++c) {
        std::size_t o = static_cast<std::size_t>(c) * h * w + px;
        double e = static_cast<double>(warped_v[o]) - target_v[o];
        mse += e * e;
      }
      mse /= 3.0;
      if (mse < mse_cap) ++ok;
    }
  }
  return {ok, valid};
}

double warp_consistency_fraction(const SceneGeometry& geom, const SceneSpec& spec,
                                 const CameraState& target_cam, const CameraState& source_cam,
                                 double db_threshold) {
  WarpConsistencyCounts c =
      warp_consistency_counts(geom, spec, target_cam, source_cam, db_threshold);
  if (c.valid == 0) return 1.0;
  return static_cast<double>(c.ok) / static_cast<double>(c.valid);
}

TaskManifest manifest_from_spec(const SceneSpec& spec, std::int64_t n_samples) {
  return {spec.name, n_samples, spec.height, spec.width, spec.fx,
          spec.fy,   spec.cx,   spec.cy,     spec.d_min, spec.d_max, spec.seed};
}

void write_dataset(const std::string& dir, const TaskManifest& manifest,
                   const std::vector<Triplet>& triplets) {
  if (manifest.n_samples != static_cast<std::int64_t>(triplets.size()))
    throw std::invalid_argument("write_dataset: manifest sample count does not match triplets");
  fs::create_directories(dir);

  json j = {{"name", manifest.name}, {"n_samples", manifest.n_samples},
            {"height", manifest.height}, {"width", manifest.width},
            {"fx", manifest.fx}, {"fy", manifest.fy}, {"cx", manifest.cx}, {"cy", manifest.cy},
            {"d_min", manifest.d_min}, {"d_max", manifest.d_max}, {"seed", manifest.seed}};
  atomic_write(fs::path(dir) / "manifest.json", j.dump(2) + "\n");

  std::size_t hw = static_cast<std::size_t>(manifest.height) * manifest.width;
  for (std::int64_t i = 0; i < manifest.n_samples; ++i) {
    const Triplet& t = triplets[static_cast<std::size_t>(i)];
    for (const TensorF* img : {&t.prev, &t.target, &t.next})
      if (img->values().size() != 3 * hw)
        throw std::invalid_argument("write_dataset: sample " + sample_file(i) +
                                    " frame size does not match the manifest");
    if (t.depth.values().size() != hw)
      throw std::invalid_argument("write_dataset: sample " + sample_file(i) +
                                  " depth size does not match the manifest");
    std::string bytes;
    bytes.reserve((10 * hw + 12) * 4);
    append_span(bytes, t.prev.values());
    append_span(bytes, t.target.values());
    append_span(bytes, t.next.values());
    append_span(bytes, t.depth.values());
    for (float x : t.pose_to_prev) put_f32_le(bytes, x);
    for (float x : t.pose_to_next) put_f32_le(bytes, x);
    atomic_write(fs::path(dir) / sample_file(i), bytes);
  }
}

TaskManifest read_manifest(const std::string& dir) {
  fs::path path = fs::path(dir) / "manifest.json";
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  json j;
  try {
    in >> j;
    TaskManifest m;
    m.name = j.at("name").get<std::string>();
    m.n_samples = j.at("n_samples").get<std::int64_t>();
    m.height = j.at("height").get<int>();
    m.width = j.at("width").get<int>();
    m.fx = j.at("fx").get<double>();
    m.fy = j.at("fy").get<double>();
    m.cx = j.at("cx").get<double>();
    m.cy = j.at("cy").get<double>();
    m.d_min = j.at("d_min").get<double>();
    m.d_max = j.at("d_max").get<double>();
    m.seed = j.at("seed").get<std::uint64_t>();
    if (m.n_samples < 0 || m.height <= 0 || m.width <= 0)
      throw std::runtime_error("invalid sizes");
    return m;
  } catch (const std::exception& e) {
    throw std::runtime_error("bad manifest " + path.string() + ": " + e.what());
  }
}

std::pair<TaskManifest, std::vector<Triplet>> read_dataset(const std::string& dir) {
  TaskManifest m = read_manifest(dir);
  int h = m.height, w = m.width;
  std::size_t hw = static_cast<std::size_t>(h) * w;
  std::size_t expect = (10 * hw + 12) * 4;

  std::vector<Triplet> out;
  out.reserve(static_cast<std::size_t>(m.n_samples));
  std::vector<unsigned char> buf;
  for (std::int64_t i = 0; i < m.n_samples; ++i) {
    fs::path path = fs::path(dir) / sample_file(i);
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    buf.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    if (buf.size() != expect)
      throw std::runtime_error(sample_file(i) + ": expected " + std::to_string(expect) +
                               " bytes, got " + std::to_string(buf.size()));
    const unsigned char* p = buf.data();
    auto take = [&](std::size_t n) {
      std::vector<float> v(n);
      for (std::size_t k = 0; k < n; ++k, p += 4) v[k] = get_f32_le(p);
      return v;
    };
    Triplet t;
    t.prev = TensorF::from_data({3, h, w}, take(3 * hw));
    t.target = TensorF::from_data({3, h, w}, take(3 * hw));
    t.next = TensorF::from_data({3, h, w}, take(3 * hw));
    t.depth = TensorF::from_data({h, w}, take(hw));
    for (int k = 0; k < 6; ++k, p += 4) t.pose_to_prev[k] = get_f32_le(p);
    for (int k = 0; k < 6; ++k, p += 4) t.pose_to_next[k] = get_f32_le(p);
    out.push_back(std::move(t));
  }
  return {m, std::move(out)};
}

std::vector<SceneSpec> default_task_suite(std::uint64_t master_seed) {
  auto task_seed = [&](const char* name) { return splitmix64(master_seed ^ fnv1a64(name)); };
  SceneSpec suburb;
  suburb.name = "suburb";
  suburb.d_min = 2;
  suburb.d_max = 20;
  suburb.plane_count = 6;
  suburb.tex_freq_lo = 0.025;
  suburb.tex_freq_hi = 0.075;
  suburb.brightness = 1.0;
  suburb.fx = 83;
  suburb.fy = 78;
  suburb.cx = 48.3;
  suburb.cy = 32.2;
  suburb.trans_std = 0.04;
  suburb.seed = task_seed("suburb");

  SceneSpec highway;
  highway.name = "highway";
  highway.d_min = 2;
  highway.d_max = 80;
  highway.plane_count = 8;
  highway.tex_freq_lo = 0.015;
  highway.tex_freq_hi = 0.055;
  highway.brightness = 0.8;
  highway.fx = 70;
  highway.fy = 66;
  highway.cx = 47.6;
  highway.cy = 31.7;
  highway.trans_std = 0.05;
  highway.seed = task_seed("highway");

  SceneSpec interior;
  interior.name = "interior";
  interior.d_min = 0.5;
  interior.d_max = 10;
  interior.plane_count = 5;
  interior.tex_freq_lo = 0.03;
  interior.tex_freq_hi = 0.09;
  interior.brightness = 0.9;
  interior.fx = 90;
  interior.fy = 86;
  interior.cx = 48.0;
  interior.cy = 32.0;
  interior.trans_std = 0.01;
  interior.seed = task_seed("interior");

  SceneSpec dusk;
  dusk.name = "dusk_city";
  dusk.d_min = 2;
  dusk.d_max = 80;
  dusk.plane_count = 7;
  dusk.tex_freq_lo = 0.018;
  dusk.tex_freq_hi = 0.06;
  dusk.brightness = 0.6;
  dusk.fx = 68;
  dusk.fy = 62;
  dusk.cx = 48.4;
  dusk.cy = 31.8;
  dusk.trans_std = 0.04;
  dusk.seed = task_seed("dusk_city");

  return {suburb, highway, interior, dusk};
}

}  // namespace mdcl
