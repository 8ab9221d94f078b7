#pragma once

#include "mdcl/tensor.hpp"

namespace mdcl {

// Pinhole intrinsics as scalar tensors so a learned-K head can feed them
// directly into the projection graph.
template <typename T>
struct CameraIntrinsics {
  Tensor<T> fx, fy, cx, cy;  // each shape {1}

  static CameraIntrinsics from_values(T fx, T fy, T cx, T cy) {
    return {Tensor<T>::scalar(fx), Tensor<T>::scalar(fy), Tensor<T>::scalar(cx),
            Tensor<T>::scalar(cy)};
  }
};

// Rigid transform: axis-angle rotation (radians * unit axis) plus translation.
template <typename T>
struct Pose {
  Tensor<T> axis_angle;   // {3}
  Tensor<T> translation;  // {3}

  static Pose identity() { return {Tensor<T>::zeros({3}), Tensor<T>::zeros({3})}; }
};

// Per-pixel camera-space point maps (backprojected pixels or their transform).
template <typename T>
struct PointMap {
  Tensor<T> x, y, z;  // each {H,W}
};

// Rodrigues formula, {3} -> {3,3}; switches to the quadratic small-angle
// series below |v| < 1e-6 so the graph stays differentiable at zero.
template <typename T>
Tensor<T> axis_angle_to_rotation(const Tensor<T>& v);

// Exact inverse transform: R^T, -R^T t.
template <typename T>
Pose<T> pose_inverse(const Pose<T>& pose);

// Backprojection D * K^-1 * p for every pixel of a {H,W} depth map.
template <typename T>
PointMap<T> cam_points(const Tensor<T>& depth, const CameraIntrinsics<T>& K);

// Applies R x + t to a point map.
template <typename T>
PointMap<T> transform_points(const PointMap<T>& points, const Pose<T>& pose);

// Perspective projection K x / z to pixel coordinates, {H,W,2} with (x, y)
// in the last axis. The homogeneous z is clamped at 1e-6 before division.
template <typename T>
Tensor<T> project_to_pixels(const PointMap<T>& points, const CameraIntrinsics<T>& K);

// Source-pixel lookup grid for each target pixel: project(transform(backproject)).
// depth must be strictly positive.
template <typename T>
Tensor<T> project_pixels(const Tensor<T>& depth, const CameraIntrinsics<T>& K,
                         const Pose<T>& pose);

// Warp of a {3,H,W} source image to the target frame via predicted depth/pose.
template <typename T>
Tensor<T> view_synthesis(const Tensor<T>& source, const Tensor<T>& depth,
                         const Pose<T>& pose, const CameraIntrinsics<T>& K);

// Affine inverse-depth mapping: 1/D = 1/max + (1/min - 1/max) * sigma.
template <typename T>
Tensor<T> disp_to_depth(const Tensor<T>& sigmoid_disp, T min_depth, T max_depth);

}  // namespace mdcl
