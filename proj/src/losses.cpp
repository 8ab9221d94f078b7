#include "mdcl/losses.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

namespace mdcl {
namespace {

// Separable 3x3 mean filter with reflection padding (mirror without edge
// repeat), and its exact adjoint. Planes are H x W, H, W >= 2.
template <typename T>
void box3(const T* in, T* out, T* tmp, int h, int w) {
  const T third = T(1) / T(3);
  for (int y = 0; y < h; ++y) {
    const T* r = in + static_cast<std::int64_t>(y) * w;
    T* t = tmp + static_cast<std::int64_t>(y) * w;
    t[0] = (r[1] + r[0] + r[1]) * third;
    for (int x = 1; x < w - 1; ++x) t[x] = (r[x - 1] + r[x] + r[x + 1]) * third;
    t[w - 1] = (r[w - 2] + r[w - 1] + r[w - 2]) * third;
  }
  for (int x = 0; x < w; ++x) out[x] = (tmp[w + x] + tmp[x] + tmp[w + x]) * third;
  for (int y = 1; y < h - 1; ++y) {
    const T* up = tmp + static_cast<std::int64_t>(y - 1) * w;
    const T* mid = tmp + static_cast<std::int64_t>(y) * w;
    const T* dn = tmp + static_cast<std::int64_t>(y + 1) * w;
    T* o = out + static_cast<std::int64_t>(y) * w;
    for (int x = 0; x < w; ++x) o[x] = (up[x] + mid[x] + dn[x]) * third;
  }
  const T* up = tmp + static_cast<std::int64_t>(h - 2) * w;
  const T* mid = tmp + static_cast<std::int64_t>(h - 1) * w;
  T* o = out + static_cast<std::int64_t>(h - 1) * w;
  for (int x = 0; x < w; ++x) o[x] = (up[x] + mid[x] + up[x]) * third;
}

// out += box3^T(g). Mirrors the forward with scatter-adds, rows first.
template <typename T>
void box3_adjoint_add(const T* g, T* out, T* tmp, int h, int w) {
  const T third = T(1) / T(3);
  std::fill(tmp, tmp + static_cast<std::int64_t>(h) * w, T(0));
  for (int y = 0; y < h; ++y) {
    const T* gr = g + static_cast<std::int64_t>(y) * w;
    const int ym = y == 0 ? 1 : y - 1;
    const int yp = y == h - 1 ? h - 2 : y + 1;
    T* tm = tmp + static_cast<std::int64_t>(ym) * w;
    T* tc = tmp + static_cast<std::int64_t>(y) * w;
    T* tp = tmp + static_cast<std::int64_t>(yp) * w;
    for (int x = 0; x < w; ++x) {
      const T v = gr[x] * third;
      tm[x] += v;
      tc[x] += v;
      tp[x] += v;
    }
  }
  for (int y = 0; y < h; ++y) {
    const T* t = tmp + static_cast<std::int64_t>(y) * w;
    T* o = out + static_cast<std::int64_t>(y) * w;
    for (int x = 0; x < w; ++x) {
      const T v = t[x] * third;
      o[x == 0 ? 1 : x - 1] += v;
      o[x] += v;
      o[x == w - 1 ? w - 2 : x + 1] += v;
    }
  }
}

// Scratch holding the five SSIM moment maps for one plane.
template <typename T>
struct SsimMoments {
  std::vector<T> mu_x, mu_y, sx, sy, sxy, tmp, sq;
  explicit SsimMoments(std::int64_t plane)
      : mu_x(plane), mu_y(plane), sx(plane), sy(plane), sxy(plane), tmp(plane), sq(plane) {}
  void compute(const T* x, const T* y, int h, int w) {
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    box3(x, mu_x.data(), tmp.data(), h, w);
    box3(y, mu_y.data(), tmp.data(), h, w);
    for (std::int64_t i = 0; i < plane; ++i) sq[i] = x[i] * x[i];
    box3(sq.data(), sx.data(), tmp.data(), h, w);
    for (std::int64_t i = 0; i < plane; ++i) sx[i] -= mu_x[i] * mu_x[i];
    for (std::int64_t i = 0; i < plane; ++i) sq[i] = y[i] * y[i];
    box3(sq.data(), sy.data(), tmp.data(), h, w);
    for (std::int64_t i = 0; i < plane; ++i) sy[i] -= mu_y[i] * mu_y[i];
    for (std::int64_t i = 0; i < plane; ++i) sq[i] = x[i] * y[i];
    box3(sq.data(), sxy.data(), tmp.data(), h, w);
    for (std::int64_t i = 0; i < plane; ++i) sxy[i] -= mu_x[i] * mu_y[i];
  }
};

// Fused photometric error for {N,C,H,W} pairs -> {N,1,H,W}. The backward pass
// recomputes the moment maps instead of stashing them (box filters are cheap,
// eight of these live in the training graph at once).
template <typename T>
Tensor<T> photometric_map_nchw(const Tensor<T>& target, const Tensor<T>& synth,
                               const LossConfig<T>& cfg) {
  const Shape& s = target.shape();
  check(s == synth.shape(), "photometric_map: shape mismatch " + shape_str(s) + " vs " +
                                shape_str(synth.shape()));
  check(s.size() == 4, "photometric_map: expected NCHW");
  const int N = s[0], C = s[1], H = s[2], W = s[3];
  check(H >= 2 && W >= 2, "photometric_map: needs at least 2x2 maps");
  const std::int64_t plane = static_cast<std::int64_t>(H) * W;
  auto px = target.node();
  auto py = synth.node();

  std::vector<T> out(static_cast<std::int64_t>(N) * plane, T(0));
  const T inv_c = T(1) / static_cast<T>(C);
  const T w_ssim = cfg.rho / T(2);
  const T w_l1 = T(1) - cfg.rho;
  SsimMoments<T> m(plane);
  for (std::int64_t p = 0; p < static_cast<std::int64_t>(N) * C; ++p) {
    const T* x = px->value.data() + p * plane;
    const T* y = py->value.data() + p * plane;
    m.compute(x, y, H, W);
    T* o = out.data() + (p / C) * plane;
    for (std::int64_t i = 0; i < plane; ++i) {
      const T a1 = T(2) * m.mu_x[i] * m.mu_y[i] + cfg.c1;
      const T a2 = T(2) * m.sxy[i] + cfg.c2;
      const T b1 = m.mu_x[i] * m.mu_x[i] + m.mu_y[i] * m.mu_y[i] + cfg.c1;
      const T b2 = m.sx[i] + m.sy[i] + cfg.c2;
      const T ssim = (a1 * a2) / (b1 * b2);
      o[i] += (w_ssim * (T(1) - ssim) + w_l1 * std::abs(x[i] - y[i])) * inv_c;
    }
  }

  auto backprop = [px = px.get(), py = py.get(), cfg, N, C, H, W, plane, inv_c, w_ssim,
                   w_l1](TensorNode<T>& self) {
    const bool nx = px->requires_grad, ny = py->requires_grad;
    if (nx) px->ensure_grad();
    if (ny) py->ensure_grad();
    SsimMoments<T> m(plane);
    std::vector<T> cmu(plane), cs(plane), csxy(plane);
    std::vector<T> adj_mu(plane), adj_s(plane), adj_sxy(plane), tmp(plane);
    for (std::int64_t p = 0; p < static_cast<std::int64_t>(N) * C; ++p) {
      const T* x = px->value.data() + p * plane;
      const T* y = py->value.data() + p * plane;
      const T* g = self.grad.data() + (p / C) * plane;
      m.compute(x, y, H, W);
      // Cotangents on the moment maps; sx/sy share c_s, and the -mu^2 /
      // -mu_x mu_y corrections fold into the mean cotangents.
      for (std::int64_t i = 0; i < plane; ++i) {
        const T a1 = T(2) * m.mu_x[i] * m.mu_y[i] + cfg.c1;
        const T a2 = T(2) * m.sxy[i] + cfg.c2;
        const T b1 = m.mu_x[i] * m.mu_x[i] + m.mu_y[i] * m.mu_y[i] + cfg.c1;
        const T b2 = m.sx[i] + m.sy[i] + cfg.c2;
        const T inv_b1b2 = T(1) / (b1 * b2);
        const T ssim = a1 * a2 * inv_b1b2;
        const T gs = -g[i] * w_ssim * inv_c;
        const T c_mu_x = gs * (T(2) * m.mu_y[i] * a2 * inv_b1b2 - T(2) * m.mu_x[i] * ssim / b1);
        cs[i] = gs * (-ssim / b2);
        csxy[i] = gs * (T(2) * a1 * inv_b1b2);
        cmu[i] = c_mu_x - T(2) * m.mu_x[i] * cs[i] - m.mu_y[i] * csxy[i];
      }
      std::fill(adj_s.begin(), adj_s.end(), T(0));
      std::fill(adj_sxy.begin(), adj_sxy.end(), T(0));
      box3_adjoint_add(cs.data(), adj_s.data(), tmp.data(), H, W);
      box3_adjoint_add(csxy.data(), adj_sxy.data(), tmp.data(), H, W);
      if (nx) {
        std::fill(adj_mu.begin(), adj_mu.end(), T(0));
        box3_adjoint_add(cmu.data(), adj_mu.data(), tmp.data(), H, W);
        T* gx = px->grad.data() + p * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          const T d = x[i] - y[i];
          const T sgn = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
          gx[i] += adj_mu[i] + T(2) * x[i] * adj_s[i] + y[i] * adj_sxy[i] +
                   g[i] * w_l1 * inv_c * sgn;
        }
      }
      if (ny) {
        for (std::int64_t i = 0; i < plane; ++i) {
          const T a1 = T(2) * m.mu_x[i] * m.mu_y[i] + cfg.c1;
          const T a2 = T(2) * m.sxy[i] + cfg.c2;
          const T b1 = m.mu_x[i] * m.mu_x[i] + m.mu_y[i] * m.mu_y[i] + cfg.c1;
          const T b2 = m.sx[i] + m.sy[i] + cfg.c2;
          const T inv_b1b2 = T(1) / (b1 * b2);
          const T ssim = a1 * a2 * inv_b1b2;
          const T gs = -g[i] * w_ssim * inv_c;
          const T c_mu_y = gs * (T(2) * m.mu_x[i] * a2 * inv_b1b2 - T(2) * m.mu_y[i] * ssim / b1);
          cmu[i] = c_mu_y - T(2) * m.mu_y[i] * cs[i] - m.mu_x[i] * csxy[i];
        }
        std::fill(adj_mu.begin(), adj_mu.end(), T(0));
        box3_adjoint_add(cmu.data(), adj_mu.data(), tmp.data(), H, W);
        T* gy = py->grad.data() + p * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          const T d = x[i] - y[i];
          const T sgn = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
          gy[i] += adj_mu[i] + T(2) * y[i] * adj_s[i] + x[i] * adj_sxy[i] -
                   g[i] * w_l1 * inv_c * sgn;
        }
      }
    }
  };
  return make_op<T>({N, 1, H, W}, std::move(out), {target, synth}, std::move(backprop));
}

}  // namespace

template <typename T>
Tensor<T> photometric_map(const Tensor<T>& target, const Tensor<T>& synth,
                          const LossConfig<T>& cfg) {
  if (target.shape().size() == 3) {
    check(target.shape() == synth.shape(),
          "photometric_map: shape mismatch " + shape_str(target.shape()) + " vs " +
              shape_str(synth.shape()));
    const int C = target.shape()[0], H = target.shape()[1], W = target.shape()[2];
    auto m = photometric_map_nchw(reshape(target, {1, C, H, W}),
                                  reshape(synth, {1, C, H, W}), cfg);
    return reshape(m, {H, W});
  }
  return photometric_map_nchw(target, synth, cfg);
}

template <typename T>
MaskedPhotometric<T> masked_min_photometric(const Tensor<T>& target,
                                            const std::vector<Tensor<T>>& synths,
                                            const std::vector<Tensor<T>>& sources,
                                            const LossConfig<T>& cfg) {
  check(!synths.empty(), "masked_min_photometric: no sources");
  check(synths.size() == sources.size(),
        "masked_min_photometric: synths/sources count mismatch");
  Tensor<T> p = photometric_map(target, synths[0], cfg);
  for (std::size_t j = 1; j < synths.size(); ++j)
    p = minimum(p, photometric_map(target, synths[j], cfg));
  Tensor<T> pid = photometric_map(target.detach(), sources[0].detach(), cfg);
  for (std::size_t j = 1; j < sources.size(); ++j)
    pid = minimum(pid, photometric_map(target.detach(), sources[j].detach(), cfg));
  MaskedPhotometric<T> out;
  out.mask = less_than(p, pid);
  out.loss_map = mul(p, out.mask);
  return out;
}

template <typename T>
Tensor<T> smoothness_map(const Tensor<T>& disp, const Tensor<T>& image) {
  check(disp.shape().size() == 2, "smoothness_map: disp must be {H,W}");
  const int H = disp.shape()[0], W = disp.shape()[1];
  check(image.shape() == Shape({3, H, W}), "smoothness_map: image must be {3,H,W}");
  auto mean_d = reduce_mean(disp);
  check(mean_d.item() != T(0), "smoothness_map: zero-mean disparity");
  auto dstar = divide(disp, mean_d);
  // forward differences padded with a zero last column/row
  auto dx = [&](const Tensor<T>& m) {
    if (W == 1) return Tensor<T>::zeros({H, 1});
    auto d = sub(narrow(m, 1, 1, W - 1), narrow(m, 1, 0, W - 1));
    return concat<T>({d, Tensor<T>::zeros({H, 1})}, 1);
  };
  auto dy = [&](const Tensor<T>& m) {
    if (H == 1) return Tensor<T>::zeros({1, W});
    auto d = sub(narrow(m, 0, 1, H - 1), narrow(m, 0, 0, H - 1));
    return concat<T>({d, Tensor<T>::zeros({1, W})}, 0);
  };
  auto gx_d = mdcl::abs(dx(dstar));
  auto gy_d = mdcl::abs(dy(dstar));
  // image gradient magnitudes averaged over channels
  std::vector<Tensor<T>> gxs, gys;
  for (int c = 0; c < 3; ++c) {
    auto ch = reshape(narrow(image, 0, c, 1), {H, W});
    gxs.push_back(mdcl::abs(dx(ch)));
    gys.push_back(mdcl::abs(dy(ch)));
  }
  auto gx_i = mul_scalar(add(add(gxs[0], gxs[1]), gxs[2]), T(1) / T(3));
  auto gy_i = mul_scalar(add(add(gys[0], gys[1]), gys[2]), T(1) / T(3));
  return add(mul(gx_d, mdcl::exp(neg(gx_i))), mul(gy_d, mdcl::exp(neg(gy_i))));
}

template <typename T>
Tensor<T> depth_task_loss(const std::vector<DepthSampleInputs<T>>& batch,
                          const LossConfig<T>& cfg) {
  check(!batch.empty(), "depth_task_loss: empty batch");
  const int n = static_cast<int>(batch.size());
  const int H = batch[0].target.shape()[1], W = batch[0].target.shape()[2];
  const std::size_t ns = batch[0].sources.size();
  check(ns > 0, "depth_task_loss: no source frames");
  for (const auto& s : batch) {
    check(s.target.shape() == Shape({3, H, W}), "depth_task_loss: frame shape mismatch");
    check(s.disps.size() == 4, "depth_task_loss: expected 4 disparity scales");
    check(s.sources.size() == ns && s.poses.size() == ns,
          "depth_task_loss: sources/poses mismatch");
  }
  auto as_batch = [&](const std::vector<Tensor<T>>& per_sample) {
    std::vector<Tensor<T>> r;
    r.reserve(per_sample.size());
    for (const auto& t : per_sample) r.push_back(reshape(t, {1, 3, H, W}));
    return concat(r, 0);
  };
  std::vector<Tensor<T>> tlist;
  for (const auto& s : batch) tlist.push_back(s.target);
  Tensor<T> target_b = as_batch(tlist);

  // identity (unwarped) photometric error per source; scale-independent
  Tensor<T> pid;
  for (std::size_t j = 0; j < ns; ++j) {
    std::vector<Tensor<T>> srcs;
    for (const auto& s : batch) srcs.push_back(s.sources[j].detach());
    auto m = photometric_map(target_b.detach(), as_batch(srcs), cfg);
    pid = j == 0 ? m : minimum(pid, m);
  }

  Tensor<T> acc;  // per-pixel sum over scales of [masked P_i + w_i * smoothness_i]
  for (int i = 0; i < 4; ++i) {
    Tensor<T> p;
    for (std::size_t j = 0; j < ns; ++j) {
      std::vector<Tensor<T>> warped;
      for (int b = 0; b < n; ++b) {
        auto depth = disp_to_depth(batch[b].disps[i], batch[b].min_depth,
                                   batch[b].max_depth);
        warped.push_back(
            view_synthesis(batch[b].sources[j], depth, batch[b].poses[j], batch[b].K));
      }
      auto m = photometric_map(target_b, as_batch(warped), cfg);
      p = j == 0 ? m : minimum(p, m);
    }
    auto masked = mul(p, less_than(p, pid));
    std::vector<Tensor<T>> smooths;
    for (int b = 0; b < n; ++b)
      smooths.push_back(
          reshape(smoothness_map(batch[b].disps[i], batch[b].target), {1, 1, H, W}));
    auto term = add(masked, mul_scalar(concat(smooths, 0),
                                       cfg.lambda / static_cast<T>(1 << i)));
    acc = i == 0 ? term : add(acc, term);
  }
  return mul_scalar(reduce_mean(acc), T(0.25));
}

#define MDCL_LOSS_INSTANTIATE(T)                                                         \
  template Tensor<T> photometric_map<T>(const Tensor<T>&, const Tensor<T>&,              \
                                        const LossConfig<T>&);                           \
  template MaskedPhotometric<T> masked_min_photometric<T>(                               \
      const Tensor<T>&, const std::vector<Tensor<T>>&, const std::vector<Tensor<T>>&,    \
      const LossConfig<T>&);                                                             \
  template Tensor<T> smoothness_map<T>(const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> depth_task_loss<T>(const std::vector<DepthSampleInputs<T>>&,        \
                                        const LossConfig<T>&);

MDCL_LOSS_INSTANTIATE(float)
MDCL_LOSS_INSTANTIATE(double)

#undef MDCL_LOSS_INSTANTIATE

}  // namespace mdcl
