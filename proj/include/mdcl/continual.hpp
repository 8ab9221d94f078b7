#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mdcl/losses.hpp"
#include "mdcl/networks.hpp"
#include "mdcl/optim.hpp"
#include "mdcl/rng.hpp"

namespace mdcl {

// One rehearsal sample: raw frames plus bookkeeping. Frames are stored as-is
// because replay re-runs view synthesis on both models.
template <typename T>
struct BufferItem {
  Tensor<T> target;                // {3,H,W}
  std::vector<Tensor<T>> sources;  // n_s x {3,H,W}
  int task_id = 0;
  bool has_intrinsics = false;     // ground-truth K known for this sample?
  CameraIntrinsics<T> K;           // valid only when has_intrinsics
  T depth_cap = T(80);             // evaluation clamp bookkeeping
};

// Fixed-capacity reservoir over the sample stream. All randomness comes from
// one dedicated stream so insertions are reproducible independently of any
// other consumer.
template <typename T>
class ReplayBuffer {
 public:
  ReplayBuffer(std::int64_t capacity, std::uint64_t seed);

  std::int64_t capacity() const { return capacity_; }
  std::int64_t size() const { return static_cast<std::int64_t>(items_.size()); }
  std::int64_t seen_count() const { return seen_; }
  const std::vector<BufferItem<T>>& items() const { return items_; }

  // Reservoir step: append while not full, otherwise replace a uniform slot
  // with probability capacity/(seen+1). Capacity 0 keeps the buffer empty.
  void insert(const BufferItem<T>& item);

  // k items: uniform with replacement while size() < k, a uniform
  // without-replacement draw otherwise. Empty buffer -> empty batch
  // (the caller skips the rehearsal terms).
  std::vector<BufferItem<T>> sample_batch(std::int64_t k);

  bool degrade_warned = false;  // capacity-0 rehearsal warning latch

 private:
  std::int64_t capacity_;
  std::int64_t seen_ = 0;
  std::vector<BufferItem<T>> items_;
  Rng rng_;
};

enum class Method { NCT, ER, ContextDepth, MonoDepthCL, Joint };

Method method_from_string(const std::string& s);  // invalid_argument on unknown
std::string method_name(Method m);
inline bool method_uses_rehearsal(Method m) {
  return m == Method::ER || m == Method::ContextDepth || m == Method::MonoDepthCL;
}
inline bool method_uses_ema(Method m) {
  return m == Method::ContextDepth || m == Method::MonoDepthCL;
}

// Working/context pair with the EMA consolidation rule
// theta_CM <- alpha_n * theta_CM + (1 - alpha_n) * theta_WM,
// alpha_n = min(1 - 1/(n+1), alpha).
template <typename T>
class DualModel {
 public:
  DualModel(const NetworkConfig& cfg, std::uint64_t seed, T alpha, T nu);

  ModelParams<T>& working() { return working_; }
  const ModelParams<T>& working() const { return working_; }
  ModelParams<T>& context() { return context_; }
  const ModelParams<T>& context() const { return context_; }

  std::int64_t iteration() const { return n_; }
  void set_iteration(std::int64_t n);  // checkpoint restore
  T alpha() const { return alpha_; }
  T nu() const { return nu_; }
  T alpha_n() const;

  // Blends context toward working with the current alpha_n. Does not touch n.
  void ema_blend();
  // Per-iteration entry point: fires ema_blend on a Bernoulli(nu) draw, then
  // increments n regardless of the outcome. Returns whether the blend fired.
  bool ema_update();

 private:
  ModelParams<T> working_;
  ModelParams<T> context_;
  std::int64_t n_ = 0;
  T alpha_;
  T nu_;
  Rng ema_rng_;
};

// Per-pixel spatiotemporal consistency between the two models' synthesized
// targets: the photometric form with the context branch detached.
template <typename T>
Tensor<T> stc_map(const Tensor<T>& context_synth, const Tensor<T>& working_synth,
                  const LossConfig<T>& cfg);

template <typename T>
struct StcConfig {
  LossConfig<T> loss;
  T crop_mean = T(0.5);
  T crop_std = T(0.1);
  bool random_crop = true;
  T min_depth = T(0.1);
  T max_depth = T(100);
};

// Crop window sampled per (source, scale): ratio ~ N(mean, std) clipped to
// [0.1, 1], extent at least one pixel, corner uniform over in-bounds offsets.
struct CropWindow {
  int top = 0, left = 0, height = 0, width = 0;
};
CropWindow sample_crop(int h, int w, double mean, double stddev, Rng& rng);

// L_STC over a memory batch: both models synthesize the target from every
// source at all four scales; each (source, scale) map is averaged over a
// random crop (ratio ~ N(mean, std) clipped to [0.1, 1]), then over scales,
// sources, and the batch.
template <typename T>
Tensor<T> stc_loss(const std::vector<BufferItem<T>>& batch, DualModel<T>& dual,
                   const StcConfig<T>& cfg, Rng& crop_rng);

// Variant reusing precomputed working-model forwards (aligned with `batch`),
// so one graph serves both the depth loss and the STC working branch.
template <typename T>
Tensor<T> stc_loss(const std::vector<BufferItem<T>>& batch,
                   const std::vector<DepthSampleInputs<T>>& working_inputs, DualModel<T>& dual,
                   const StcConfig<T>& cfg, Rng& crop_rng);

template <typename T>
struct ContinualConfig {
  Method method = Method::MonoDepthCL;
  T beta = T(0.1);
  T crop_mean = T(0.5);
  T crop_std = T(0.1);
  bool warmup = true;
  bool random_crop = true;
  std::int64_t rehearsal_batch = 8;
};

template <typename T>
struct TrainStepConfig {
  ContinualConfig<T> cl;
  LossConfig<T> loss;
  T min_depth = T(0.1);
  T max_depth = T(100);
  int task_index = 1;  // 1-based; warmup omits STC on task 1
};

template <typename T>
struct StepLosses {
  T depth = T(0);
  T stc = T(0);    // raw L_STC (before the beta weight); 0 when inactive
  T total = T(0);
  bool stc_active = false;
  bool ema_fired = false;
};

// Builds the per-sample loss inputs from one buffer item using `model`'s
// predictions (and its predicted K when the item has none).
template <typename T>
DepthSampleInputs<T> make_sample_inputs(const BufferItem<T>& item, const ModelParams<T>& model,
                                        T min_depth, T max_depth);

// One training iteration of the selected method. Handles rehearsal sampling,
// the union depth loss, the STC term (MonoDepthCL), the optimizer step on the
// working model, EMA consolidation, and stream-sample insertion. A rehearsal
// method with capacity 0 degrades to NCT (warning logged once per buffer).
template <typename T>
StepLosses<T> train_step(const std::vector<BufferItem<T>>& stream_batch,
                         ReplayBuffer<T>& buffer, DualModel<T>& dual, Adam<T>& opt,
                         const TrainStepConfig<T>& cfg, Rng& crop_rng);

// Which model a method evaluates with (context for ContextDepth).
template <typename T>
const ModelParams<T>& eval_model(const DualModel<T>& dual, Method m);

// Aliases the model's tensors for the optimizer.
template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> optimizer_params(ModelParams<T>& m);

}  // namespace mdcl
