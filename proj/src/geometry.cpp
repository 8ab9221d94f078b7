#include "mdcl/geometry.hpp"

#include <cmath>

namespace mdcl {
namespace {

// Pixel-index lattices, x along width and y along height.
template <typename T>
Tensor<T> mesh_u(int h, int w) {
  std::vector<T> v(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) v[y * w + x] = static_cast<T>(x);
  return Tensor<T>::from_data({h, w}, std::move(v));
}

template <typename T>
Tensor<T> mesh_v(int h, int w) {
  std::vector<T> v(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) v[y * w + x] = static_cast<T>(y);
  return Tensor<T>::from_data({h, w}, std::move(v));
}

template <typename T>
Tensor<T> at(const Tensor<T>& flat, int i) {
  return narrow(flat, 0, i, 1);
}

// Scalar dot product row_i(R) . t for a {3,3} rotation and {3} vector.
template <typename T>
Tensor<T> row_dot(const Tensor<T>& r9, int row, const Tensor<T>& t) {
  auto acc = mul(at(r9, row * 3), at(t, 0));
  acc = add(acc, mul(at(r9, row * 3 + 1), at(t, 1)));
  return add(acc, mul(at(r9, row * 3 + 2), at(t, 2)));
}

}  // namespace

template <typename T>
Tensor<T> axis_angle_to_rotation(const Tensor<T>& v) {
  check(v.shape() == Shape{3}, "axis_angle_to_rotation: expected shape [3], got " +
                                   shape_str(v.shape()));
  auto x = at(v, 0), y = at(v, 1), z = at(v, 2);
  auto xx = mul(x, x), yy = mul(y, y), zz = mul(z, z);
  auto s = add(add(xx, yy), zz);  // theta^2
  // A = sin(t)/t, B = (1-cos(t))/t^2, both expressed in s = t^2 so the
  // series branch stays smooth through zero.
  Tensor<T> A, B;
  if (s.item() < T(1e-12)) {
    A = add_scalar(mul_scalar(s, T(-1) / T(6)), T(1));
    B = add_scalar(mul_scalar(s, T(-1) / T(24)), T(0.5));
  } else {
    auto theta = mdcl::sqrt(s);
    A = divide(mdcl::sin(theta), theta);
    B = divide(add_scalar(neg(mdcl::cos(theta)), T(1)), s);
  }
  auto xy = mul(x, y), xz = mul(x, z), yz = mul(y, z);
  auto one = Tensor<T>::scalar(T(1));
  std::vector<Tensor<T>> r = {
      sub(one, mul(B, add(yy, zz))), add(neg(mul(A, z)), mul(B, xy)),
      add(mul(A, y), mul(B, xz)),
      add(mul(A, z), mul(B, xy)),       sub(one, mul(B, add(xx, zz))),
      add(neg(mul(A, x)), mul(B, yz)),
      add(neg(mul(A, y)), mul(B, xz)),  add(mul(A, x), mul(B, yz)),
      sub(one, mul(B, add(xx, yy)))};
  return reshape(concat(r, 0), {3, 3});
}

template <typename T>
Pose<T> pose_inverse(const Pose<T>& pose) {
  Pose<T> inv;
  inv.axis_angle = neg(pose.axis_angle);
  auto rinv = reshape(axis_angle_to_rotation(inv.axis_angle), {9});
  std::vector<Tensor<T>> t = {neg(row_dot(rinv, 0, pose.translation)),
                              neg(row_dot(rinv, 1, pose.translation)),
                              neg(row_dot(rinv, 2, pose.translation))};
  inv.translation = concat(t, 0);
  return inv;
}

template <typename T>
PointMap<T> cam_points(const Tensor<T>& depth, const CameraIntrinsics<T>& K) {
  check(depth.shape().size() == 2, "cam_points: depth must be {H,W}");
  const int h = depth.shape()[0], w = depth.shape()[1];
  auto u = mesh_u<T>(h, w), v = mesh_v<T>(h, w);
  PointMap<T> p;
  p.x = mul(divide(sub(u, K.cx), K.fx), depth);
  p.y = mul(divide(sub(v, K.cy), K.fy), depth);
  p.z = depth;
  return p;
}

template <typename T>
PointMap<T> transform_points(const PointMap<T>& points, const Pose<T>& pose) {
  auto r9 = reshape(axis_angle_to_rotation(pose.axis_angle), {9});
  auto t = pose.translation;
  auto term = [&](int row) {
    auto acc = mul(at(r9, row * 3), points.x);
    acc = add(acc, mul(at(r9, row * 3 + 1), points.y));
    acc = add(acc, mul(at(r9, row * 3 + 2), points.z));
    return add(acc, at(t, row));
  };
  PointMap<T> out;
  out.x = term(0);
  out.y = term(1);
  out.z = term(2);
  return out;
}

template <typename T>
Tensor<T> project_to_pixels(const PointMap<T>& points, const CameraIntrinsics<T>& K) {
  auto zc = maximum(points.z, Tensor<T>::scalar(T(1e-6)));
  auto u = add(mul(K.fx, divide(points.x, zc)), K.cx);
  auto v = add(mul(K.fy, divide(points.y, zc)), K.cy);
  const int h = u.shape()[0], w = u.shape()[1];
  auto grid = concat<T>({reshape(u, {h, w, 1}), reshape(v, {h, w, 1})}, 2);
  return grid;  // {H,W,2}
}

template <typename T>
Tensor<T> project_pixels(const Tensor<T>& depth, const CameraIntrinsics<T>& K,
                         const Pose<T>& pose) {
  for (T d : depth.values())
    check(d > T(0), "project_pixels: depth must be strictly positive");
  return project_to_pixels(transform_points(cam_points(depth, K), pose), K);
}

template <typename T>
Tensor<T> view_synthesis(const Tensor<T>& source, const Tensor<T>& depth,
                         const Pose<T>& pose, const CameraIntrinsics<T>& K) {
  check(source.shape().size() == 3 && source.shape()[0] == 3,
        "view_synthesis: source must be {3,H,W}");
  const int h = source.shape()[1], w = source.shape()[2];
  check(depth.shape() == Shape{h, w}, "view_synthesis: depth/source size mismatch");
  auto grid = reshape(project_pixels(depth, K, pose), {1, h, w, 2});
  auto warped = grid_sample(reshape(source, {1, 3, h, w}), grid);
  return reshape(warped, {3, h, w});
}

template <typename T>
Tensor<T> disp_to_depth(const Tensor<T>& sigmoid_disp, T min_depth, T max_depth) {
  check(min_depth > T(0) && min_depth < max_depth,
        "disp_to_depth: need 0 < min_depth < max_depth");
  auto inv = add_scalar(mul_scalar(sigmoid_disp, T(1) / min_depth - T(1) / max_depth),
                        T(1) / max_depth);
  return divide(Tensor<T>::scalar(T(1)), inv);
}

#define MDCL_GEO_INSTANTIATE(T)                                                          \
  template Tensor<T> axis_angle_to_rotation<T>(const Tensor<T>&);                        \
  template Pose<T> pose_inverse<T>(const Pose<T>&);                                      \
  template PointMap<T> cam_points<T>(const Tensor<T>&, const CameraIntrinsics<T>&);      \
  template PointMap<T> transform_points<T>(const PointMap<T>&, const Pose<T>&);          \
  template Tensor<T> project_to_pixels<T>(const PointMap<T>&, const CameraIntrinsics<T>&); \
  template Tensor<T> project_pixels<T>(const Tensor<T>&, const CameraIntrinsics<T>&,     \
                                       const Pose<T>&);                                  \
  template Tensor<T> view_synthesis<T>(const Tensor<T>&, const Tensor<T>&,               \
                                       const Pose<T>&, const CameraIntrinsics<T>&);      \
  template Tensor<T> disp_to_depth<T>(const Tensor<T>&, T, T);

MDCL_GEO_INSTANTIATE(float)
MDCL_GEO_INSTANTIATE(double)

#undef MDCL_GEO_INSTANTIATE

}  // namespace mdcl
