#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mdcl/geometry.hpp"
#include "mdcl/tensor.hpp"

namespace mdcl {

// Controls for one synthetic task. Texture frequencies are cycles per pixel
// as each plane is seen from the scene origin (kept well under Nyquist so
// bilinear warps stay faithful); motion magnitudes are per-frame standard
// deviations, and draws are clamped to 3 sigma so the depth-range guarantee
// below stays analytic.
struct SceneSpec {
  std::string name = "task";
  int height = 64;
  int width = 96;
  double d_min = 2.0;
  double d_max = 20.0;
  int plane_count = 6;
  double tex_freq_lo = 0.025;
  double tex_freq_hi = 0.075;
  double brightness = 1.0;  // texture contrast gain in (0, 1]
  double fx = 83, fy = 78, cx = 48, cy = 32;
  double trans_std = 0.04;  // scene units per frame
  double rot_std = 0.006;   // radians per frame, capped at 0.01
  std::uint64_t seed = 1;

  // Enforces the bounds that make every rendered depth provably lie in
  // [d_min, d_max]: principal point near the center, focal lengths at least
  // 0.7x the image size, small rotations, translation budget inside the
  // plane-placement margins.
  void validate() const;
};

// Camera state in the scene frame: world_point = R(aa) * cam_point + pos.
struct CameraState {
  std::array<double, 3> aa{0, 0, 0};
  std::array<double, 3> pos{0, 0, 0};
};

// One fronto-parallel textured plane at world depth z. The farthest plane is
// infinite (background); the others are axis-aligned rectangles.
struct PlaneDef {
  double z = 0;
  bool infinite = false;
  double cx = 0, cy = 0, half_w = 0, half_h = 0;
  std::array<double, 3> tint{1, 1, 1};
  struct Wave {
    double wx, wy, amp, phase;  // value += amp * sin(wx*x + wy*y + phase)
  };
  std::vector<Wave> waves;
};

// Planes sorted nearest-first; the last entry is the infinite background.
struct SceneGeometry {
  std::vector<PlaneDef> planes;
};

// Deterministic scene construction from the spec's "scene" RNG stream.
SceneGeometry build_scene(const SceneSpec& spec);

struct RenderedFrame {
  TensorF image;               // {3,H,W}, values in [0,1]
  TensorF depth;               // {H,W}, camera-frame depth in [d_min,d_max]
  std::vector<int> plane_ids;  // H*W, index into geometry.planes
};

// Analytic painter-order render. Errors when the camera sits at or behind
// every plane.
RenderedFrame render_frame(const SceneGeometry& geom, const SceneSpec& spec,
                           const CameraState& cam);

// Nearest plane hit by the ray through continuous pixel (u, v), or -1 when
// the camera is past every plane along that ray.
int plane_id_at(const SceneGeometry& geom, const SceneSpec& spec, const CameraState& cam,
                double u, double v);

// Relative pose mapping points in `from`'s camera frame to `to`'s frame.
Pose<float> relative_pose(const CameraState& from, const CameraState& to);

struct Triplet {
  TensorF prev, target, next;          // each {3,H,W}
  TensorF depth;                       // target-frame gt depth {H,W}
  std::array<float, 6> pose_to_prev;   // axis-angle then translation
  std::array<float, 6> pose_to_next;
};

struct SampleStates {
  CameraState prev, target, next;
};

// Pure function of (seed, index): the three camera states of sample `index`.
SampleStates sample_camera_states(const SceneSpec& spec, std::int64_t index);

// Renders n samples; deterministic, and each sample depends only on
// (spec.seed, its own index).
std::vector<Triplet> generate_task(const SceneSpec& spec, std::int64_t n_samples);

// Ground-truth-warp agreement: the fraction of analytically visible target
// pixels (same plane visible at all four source-side interpolation taps,
// projection in bounds) whose bilinear warp error stays above `db_threshold`
// PSNR. The oracle validating generator and geometry together.
double warp_consistency_fraction(const SceneGeometry& geom, const SceneSpec& spec,
                                 const CameraState& target_cam, const CameraState& source_cam,
                                 double db_threshold = 30.0);

// Raw tallies behind warp_consistency_fraction, so callers can pool the
// statistic over many samples instead of averaging per-pair fractions.
struct WarpConsistencyCounts {
  std::int64_t ok = 0;     // visible pixels whose warp error beats the threshold
  std::int64_t valid = 0;  // analytically visible pixels
};
WarpConsistencyCounts warp_consistency_counts(const SceneGeometry& geom, const SceneSpec& spec,
                                              const CameraState& target_cam,
                                              const CameraState& source_cam,
                                              double db_threshold = 30.0);

// What manifest.json stores.
struct TaskManifest {
  std::string name;
  std::int64_t n_samples = 0;
  int height = 0, width = 0;
  double fx = 0, fy = 0, cx = 0, cy = 0;
  double d_min = 0, d_max = 0;
  std::uint64_t seed = 0;
};

TaskManifest manifest_from_spec(const SceneSpec& spec, std::int64_t n_samples);

// Task directory layout: manifest.json plus sample_%06d.bin, each binary32
// little-endian [prev, target, next (3HW each), depth (HW), pose_to_prev (6),
// pose_to_next (6)]. Writes are atomic (temp file + rename).
void write_dataset(const std::string& dir, const TaskManifest& manifest,
                   const std::vector<Triplet>& triplets);
TaskManifest read_manifest(const std::string& dir);
std::pair<TaskManifest, std::vector<Triplet>> read_dataset(const std::string& dir);

// The 4-task CUDE-analog suite: distinct depth ranges, texture bands,
// intrinsics, and brightness; one short-range "indoor" task. Task seeds are
// derived from the master seed.
std::vector<SceneSpec> default_task_suite(std::uint64_t master_seed);

}  // namespace mdcl
