#pragma once

#include <vector>

#include "mdcl/geometry.hpp"
#include "mdcl/tensor.hpp"

namespace mdcl {

template <typename T>
struct LossConfig {
  T rho = T(0.85);    // SSIM mixing weight
  T lambda = T(1e-3); // smoothness weight
  T c1 = T(1e-4);     // 0.01^2
  T c2 = T(9e-4);     // 0.03^2
};

// Per-pixel photometric error (rho/2)(1 - SSIM) + (1-rho)*mean_c|x - y|.
// SSIM uses 3x3 mean filters with reflection padding, constants c1/c2, and is
// averaged over channels. Accepts {3,H,W} -> {H,W} or batched
// {N,C,H,W} -> {N,1,H,W}. Implemented as one fused differentiable op.
template <typename T>
Tensor<T> photometric_map(const Tensor<T>& target, const Tensor<T>& synth,
                          const LossConfig<T>& cfg);

template <typename T>
struct MaskedPhotometric {
  Tensor<T> loss_map;  // min_j photometric, zeroed where the mask is 0
  Tensor<T> mask;      // 0/1 automask, constant (carries no gradient)
};

// Per-pixel min over synthesized sources, automasked against the identity
// (unwarped) photometric error with a strict < comparison.
template <typename T>
MaskedPhotometric<T> masked_min_photometric(const Tensor<T>& target,
                                            const std::vector<Tensor<T>>& synths,
                                            const std::vector<Tensor<T>>& sources,
                                            const LossConfig<T>& cfg);

// Edge-aware smoothness of the mean-normalized disparity: forward differences,
// last row/column zero, image-gradient weights e^{-|dI|} averaged over channels.
template <typename T>
Tensor<T> smoothness_map(const Tensor<T>& disp, const Tensor<T>& image);

// Everything the task loss needs for one sample. Disparities are the four
// sigmoid maps already upsampled to full resolution, finest last.
template <typename T>
struct DepthSampleInputs {
  Tensor<T> target;                // {3,H,W}
  std::vector<Tensor<T>> sources;  // n_s x {3,H,W}
  std::vector<Tensor<T>> disps;    // 4 x {H,W}
  std::vector<Pose<T>> poses;      // n_s, target -> source
  CameraIntrinsics<T> K;
  T min_depth = T(0.1);
  T max_depth = T(100);
};

// Total task loss: (1/(4HW)) sum_i sum_p [masked photometric_i +
// (lambda/2^{i-1}) smoothness_i], averaged over the batch.
template <typename T>
Tensor<T> depth_task_loss(const std::vector<DepthSampleInputs<T>>& batch,
                          const LossConfig<T>& cfg);

}  // namespace mdcl
