#include "mdcl/continual.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace mdcl {

template <typename T>
ReplayBuffer<T>::ReplayBuffer(std::int64_t capacity, std::uint64_t seed)
    : capacity_(capacity), rng_(Rng::stream(seed, "buffer")) {
  check(capacity >= 0, "ReplayBuffer: negative capacity");
}

template <typename T>
void ReplayBuffer<T>::insert(const BufferItem<T>& item) {
  if (size() < capacity_) {
    items_.push_back(item);
  } else if (capacity_ > 0) {
    const double p = static_cast<double>(capacity_) / static_cast<double>(seen_ + 1);
    if (rng_.bernoulli(p)) {
      const std::size_t slot = static_cast<std::size_t>(rng_.uniform_int(
          static_cast<std::uint64_t>(capacity_)));
      items_[slot] = item;
    }
  }
  seen_ += 1;
}

template <typename T>
std::vector<BufferItem<T>> ReplayBuffer<T>::sample_batch(std::int64_t k) {
  check(k > 0, "sample_batch: k must be positive");
  std::vector<BufferItem<T>> out;
  const std::int64_t n = size();
  if (n == 0) return out;  // "no rehearsal" signal
  out.reserve(static_cast<std::size_t>(k));
  if (n < k) {
    for (std::int64_t i = 0; i < k; ++i)
      out.push_back(items_[rng_.uniform_int(static_cast<std::uint64_t>(n))]);
  } else {
    // partial Fisher-Yates: first k entries of a uniform permutation
    std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    for (std::int64_t i = 0; i < k; ++i) {
      const std::int64_t j = i + static_cast<std::int64_t>(rng_.uniform_int(
                                     static_cast<std::uint64_t>(n - i)));
      std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
      out.push_back(items_[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]);
    }
  }
  return out;
}

Method method_from_string(const std::string& s) {
  if (s == "NCT") return Method::NCT;
  if (s == "ER") return Method::ER;
  if (s == "ContextDepth") return Method::ContextDepth;
  if (s == "MonoDepthCL") return Method::MonoDepthCL;
  if (s == "Joint") return Method::Joint;
  throw std::invalid_argument("unknown method '" + s +
                              "' (expected NCT, ER, ContextDepth, MonoDepthCL, or Joint)");
}

std::string method_name(Method m) {
  switch (m) {
    case Method::NCT: return "NCT";
    case Method::ER: return "ER";
    case Method::ContextDepth: return "ContextDepth";
    case Method::MonoDepthCL: return "MonoDepthCL";
    case Method::Joint: return "Joint";
  }
  return "?";
}

template <typename T>
DualModel<T>::DualModel(const NetworkConfig& cfg, std::uint64_t seed, T alpha, T nu)
    : working_(cfg, seed),
      context_(working_.clone()),
      alpha_(alpha),
      nu_(nu),
      ema_rng_(Rng::stream(seed, "ema")) {
  if (!(alpha > T(0) && alpha < T(1)))
    throw std::invalid_argument("DualModel: alpha must be in (0,1)");
  if (!(nu > T(0) && nu < T(1)))
    throw std::invalid_argument("DualModel: nu must be in (0,1)");
}

template <typename T>
void DualModel<T>::set_iteration(std::int64_t n) {
  check(n >= 0, "DualModel: negative iteration counter");
  n_ = n;
}

template <typename T>
T DualModel<T>::alpha_n() const {
  const T ramp = T(1) - T(1) / static_cast<T>(n_ + 1);
  return std::min(ramp, alpha_);
}

template <typename T>
void DualModel<T>::ema_blend() {
  const T a = alpha_n();
  auto& wp = working_.params();
  auto& cp = context_.params();
  check(wp.size() == cp.size(), "ema_blend: parameter count mismatch");
  for (std::size_t i = 0; i < wp.size(); ++i) {
    check(wp[i].tensor.shape() == cp[i].tensor.shape(),
          "ema_blend: shape mismatch at " + wp[i].name);
    auto w = wp[i].tensor.values();
    auto c = cp[i].tensor.values_mut();
    if (a == T(0)) {
      std::copy(w.begin(), w.end(), c.begin());  // exact copy at n = 0
    } else {
      const T b = T(1) - a;
      for (std::size_t j = 0; j < c.size(); ++j) c[j] = a * c[j] + b * w[j];
    }
  }
}

template <typename T>
bool DualModel<T>::ema_update() {
  const bool fired = ema_rng_.bernoulli(static_cast<double>(nu_));
  if (fired) ema_blend();
  n_ += 1;
  return fired;
}

template <typename T>
Tensor<T> stc_map(const Tensor<T>& context_synth, const Tensor<T>& working_synth,
                  const LossConfig<T>& cfg) {
  check(context_synth.shape() == working_synth.shape(),
        "stc_map: shape mismatch " + shape_str(context_synth.shape()) + " vs " +
            shape_str(working_synth.shape()));
  return photometric_map(context_synth.detach(), working_synth, cfg);
}

CropWindow sample_crop(int h, int w, double mean, double stddev, Rng& rng) {
  check(h > 0 && w > 0, "sample_crop: empty map");
  double r = rng.normal(mean, stddev);
  r = std::clamp(r, 0.1, 1.0);
  CropWindow c;
  c.height = std::max(1, static_cast<int>(std::floor(r * h)));
  c.width = std::max(1, static_cast<int>(std::floor(r * w)));
  c.top = static_cast<int>(rng.randint(0, h - c.height));
  c.left = static_cast<int>(rng.randint(0, w - c.width));
  return c;
}

namespace {

template <typename T>
CameraIntrinsics<T> average_intrinsics(const std::vector<CameraIntrinsics<T>>& ks) {
  CameraIntrinsics<T> out = ks[0];
  for (std::size_t i = 1; i < ks.size(); ++i) {
    out.fx = add(out.fx, ks[i].fx);
    out.fy = add(out.fy, ks[i].fy);
    out.cx = add(out.cx, ks[i].cx);
    out.cy = add(out.cy, ks[i].cy);
  }
  if (ks.size() > 1) {
    const T inv = T(1) / static_cast<T>(ks.size());
    out.fx = mul_scalar(out.fx, inv);
    out.fy = mul_scalar(out.fy, inv);
    out.cx = mul_scalar(out.cx, inv);
    out.cy = mul_scalar(out.cy, inv);
  }
  return out;
}

}  // namespace

template <typename T>
DepthSampleInputs<T> make_sample_inputs(const BufferItem<T>& item, const ModelParams<T>& model,
                                        T min_depth, T max_depth) {
  check(!item.sources.empty(), "make_sample_inputs: item has no source frames");
  DepthSampleInputs<T> s;
  s.target = item.target;
  s.sources = item.sources;
  s.disps = depth_forward(item.target, model);
  std::vector<CameraIntrinsics<T>> predicted;
  for (const auto& src : item.sources) {
    auto pp = pose_forward(src, item.target, model);
    s.poses.push_back(pp.pose);
    if (pp.has_intrinsics) predicted.push_back(pp.intrinsics);
  }
  if (item.has_intrinsics) {
    s.K = item.K;
  } else {
    check(!predicted.empty(),
          "make_sample_inputs: item has no intrinsics and the model does not learn them");
    s.K = average_intrinsics(predicted);  // per-snippet K
  }
  s.min_depth = min_depth;
  s.max_depth = max_depth;
  return s;
}

template <typename T>
Tensor<T> stc_loss(const std::vector<BufferItem<T>>& batch,
                   const std::vector<DepthSampleInputs<T>>& working_inputs, DualModel<T>& dual,
                   const StcConfig<T>& cfg, Rng& crop_rng) {
  check(!batch.empty(), "stc_loss: empty memory batch");
  check(batch.size() == working_inputs.size(), "stc_loss: batch/inputs size mismatch");
  Tensor<T> acc;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const BufferItem<T>& item = batch[b];
    const DepthSampleInputs<T>& in_w = working_inputs[b];
    auto in_c = make_sample_inputs(item, dual.context(), cfg.min_depth, cfg.max_depth);
    const int h = item.target.shape()[1], w = item.target.shape()[2];
    const std::size_t ns = item.sources.size();

    std::vector<Tensor<T>> depth_w(4), depth_c(4);
    for (int i = 0; i < 4; ++i) {
      depth_w[i] = disp_to_depth(in_w.disps[static_cast<std::size_t>(i)], cfg.min_depth,
                                 cfg.max_depth);
      depth_c[i] = disp_to_depth(in_c.disps[static_cast<std::size_t>(i)], cfg.min_depth,
                                 cfg.max_depth);
    }

    Tensor<T> item_acc;
    for (std::size_t j = 0; j < ns; ++j) {
      for (int i = 0; i < 4; ++i) {
        auto synth_w = view_synthesis(item.sources[j], depth_w[i], in_w.poses[j], in_w.K);
        auto synth_c = view_synthesis(item.sources[j], depth_c[i], in_c.poses[j], in_c.K);
        auto map = stc_map(synth_c, synth_w, cfg.loss);
        Tensor<T> term;
        if (cfg.random_crop) {
          const CropWindow c = sample_crop(h, w, static_cast<double>(cfg.crop_mean),
                                           static_cast<double>(cfg.crop_std), crop_rng);
          term = reduce_mean(narrow(narrow(map, 0, c.top, c.height), 1, c.left, c.width));
        } else {
          term = reduce_mean(map);
        }
        item_acc = item_acc.defined() ? add(item_acc, term) : term;
      }
    }
    auto item_loss = mul_scalar(item_acc, T(1) / static_cast<T>(4 * ns));
    acc = acc.defined() ? add(acc, item_loss) : item_loss;
  }
  return mul_scalar(acc, T(1) / static_cast<T>(batch.size()));
}

template <typename T>
Tensor<T> stc_loss(const std::vector<BufferItem<T>>& batch, DualModel<T>& dual,
                   const StcConfig<T>& cfg, Rng& crop_rng) {
  std::vector<DepthSampleInputs<T>> working_inputs;
  working_inputs.reserve(batch.size());
  for (const auto& item : batch)
    working_inputs.push_back(
        make_sample_inputs(item, dual.working(), cfg.min_depth, cfg.max_depth));
  return stc_loss(batch, working_inputs, dual, cfg, crop_rng);
}

template <typename T>
const ModelParams<T>& eval_model(const DualModel<T>& dual, Method m) {
  return m == Method::ContextDepth ? dual.context() : dual.working();
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> optimizer_params(ModelParams<T>& m) {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  out.reserve(m.params().size());
  for (auto& p : m.params()) out.push_back({p.name, p.tensor});
  return out;
}

template <typename T>
StepLosses<T> train_step(const std::vector<BufferItem<T>>& stream_batch,
                         ReplayBuffer<T>& buffer, DualModel<T>& dual, Adam<T>& opt,
                         const TrainStepConfig<T>& cfg, Rng& crop_rng) {
  check(!stream_batch.empty(), "train_step: empty stream batch");
  Method method = cfg.cl.method;
  if (method_uses_rehearsal(method) && buffer.capacity() == 0) {
    if (!buffer.degrade_warned) {
      std::fprintf(stderr, "warning: %s with buffer capacity 0 degrades to NCT\n",
                   method_name(method).c_str());
      buffer.degrade_warned = true;
    }
    method = Method::NCT;
  }

  std::vector<BufferItem<T>> memory;
  if (method_uses_rehearsal(method) && buffer.size() > 0)
    memory = buffer.sample_batch(cfg.cl.rehearsal_batch);

  std::vector<DepthSampleInputs<T>> union_inputs;
  union_inputs.reserve(stream_batch.size() + memory.size());
  for (const auto& it : stream_batch)
    union_inputs.push_back(make_sample_inputs(it, dual.working(), cfg.min_depth, cfg.max_depth));
  for (const auto& it : memory)
    union_inputs.push_back(make_sample_inputs(it, dual.working(), cfg.min_depth, cfg.max_depth));

  auto l_depth = depth_task_loss(union_inputs, cfg.loss);
  StepLosses<T> out;
  out.depth = l_depth.item();

  Tensor<T> total = l_depth;
  const bool warmup_blocks = cfg.cl.warmup && cfg.task_index == 1;
  if (method == Method::MonoDepthCL && !memory.empty() && !warmup_blocks &&
      cfg.cl.beta > T(0)) {
    StcConfig<T> sc;
    sc.loss = cfg.loss;
    sc.crop_mean = cfg.cl.crop_mean;
    sc.crop_std = cfg.cl.crop_std;
    sc.random_crop = cfg.cl.random_crop;
    sc.min_depth = cfg.min_depth;
    sc.max_depth = cfg.max_depth;
    // reuse the union-batch working forwards for the memory slice
    std::vector<DepthSampleInputs<T>> mem_inputs(
        union_inputs.begin() + static_cast<std::ptrdiff_t>(stream_batch.size()),
        union_inputs.end());
    auto l_stc = stc_loss(memory, mem_inputs, dual, sc, crop_rng);
    out.stc = l_stc.item();
    out.stc_active = true;
    total = add(total, mul_scalar(l_stc, cfg.cl.beta));
  }
  out.total = total.item();

  opt.zero_grad();
  backward(total);
  opt.step();

  if (method_uses_ema(method)) out.ema_fired = dual.ema_update();
  if (method_uses_rehearsal(method))
    for (const auto& it : stream_batch) buffer.insert(it);
  return out;
}

#define MDCL_CONTINUAL_INSTANTIATE(T)                                                       \
  template class ReplayBuffer<T>;                                                           \
  template class DualModel<T>;                                                              \
  template Tensor<T> stc_map<T>(const Tensor<T>&, const Tensor<T>&, const LossConfig<T>&);  \
  template DepthSampleInputs<T> make_sample_inputs<T>(const BufferItem<T>&,                 \
                                                      const ModelParams<T>&, T, T);         \
  template Tensor<T> stc_loss<T>(const std::vector<BufferItem<T>>&,                         \
                                 const std::vector<DepthSampleInputs<T>>&, DualModel<T>&,   \
                                 const StcConfig<T>&, Rng&);                                \
  template Tensor<T> stc_loss<T>(const std::vector<BufferItem<T>>&, DualModel<T>&,          \
                                 const StcConfig<T>&, Rng&);                                \
  template const ModelParams<T>& eval_model<T>(const DualModel<T>&, Method);                \
  template std::vector<std::pair<std::string, Tensor<T>>> optimizer_params<T>(              \
      ModelParams<T>&);                                                                     \
  template StepLosses<T> train_step<T>(const std::vector<BufferItem<T>>&, ReplayBuffer<T>&, \
                                       DualModel<T>&, Adam<T>&, const TrainStepConfig<T>&,  \
                                       Rng&);

MDCL_CONTINUAL_INSTANTIATE(float)
MDCL_CONTINUAL_INSTANTIATE(double)

}  // namespace mdcl
