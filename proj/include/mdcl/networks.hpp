#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mdcl/geometry.hpp"
#include "mdcl/tensor.hpp"

namespace mdcl {

// Static shape/topology description shared by the depth and ego-motion
// networks. Three stride-2 stages mean the input must be divisible by 8.
struct NetworkConfig {
  int height = 64;
  int width = 96;
  int base_channels = 16;     // encoder stage widths: C, 2C, 4C
  bool learn_intrinsics = false;

  void validate() const;      // throws std::invalid_argument on bad values
};

// One learnable tensor with a stable, checkpoint-visible name.
template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
};

// Ordered parameter set for one model instance (depth + ego-motion nets).
// Order is fixed by the topology so optimizer state and EMA blending can be
// applied positionally.
template <typename T>
class ModelParams {
 public:
  ModelParams() = default;
  // He-normal init; every tensor draws from its own named stream of `seed`.
  ModelParams(const NetworkConfig& cfg, std::uint64_t seed);

  const NetworkConfig& config() const { return cfg_; }
  std::vector<NamedParam<T>>& params() { return params_; }
  const std::vector<NamedParam<T>>& params() const { return params_; }

  // Lookup by exact name; throws std::invalid_argument when missing.
  const Tensor<T>& get(const std::string& name) const;

  // Deep copy: fresh value buffers, no shared state with *this.
  ModelParams clone() const;
  // Copies values from a structurally identical model (names and shapes
  // must match pairwise); leaves the receiving graph nodes in place.
  void copy_values_from(const ModelParams& other);

 private:
  NetworkConfig cfg_;
  std::vector<NamedParam<T>> params_;
};

// Ego-motion result: relative pose target->source plus (optionally) the
// intrinsics predicted from the same bottleneck features.
template <typename T>
struct PosePrediction {
  Pose<T> pose;
  CameraIntrinsics<T> intrinsics;
  bool has_intrinsics = false;
};

// Multi-scale sigmoid disparity for one {3,H,W} image, coarsest scale first
// (matching DepthSampleInputs::disps). All four maps are resized to {H,W}.
template <typename T>
std::vector<Tensor<T>> depth_forward(const Tensor<T>& image, const ModelParams<T>& m);

// Relative pose for a (source, target) pair of {3,H,W} images. When the
// config enables learned intrinsics the result carries a per-pair K.
template <typename T>
PosePrediction<T> pose_forward(const Tensor<T>& source, const Tensor<T>& target,
                               const ModelParams<T>& m);

// Checkpoint container: arbitrary named f32 tensors plus a JSON-serializable
// metadata string (stored verbatim in the manifest).
struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

void save_checkpoint(const std::string& path, const std::string& meta_json,
                     const std::vector<CheckpointTensor>& tensors);
// Throws std::runtime_error with a descriptive message on malformed files.
void load_checkpoint(const std::string& path, std::string& meta_json,
                     std::vector<CheckpointTensor>& tensors);

// Flattens model parameters into checkpoint records under `prefix` (e.g.
// "working/"), and restores them back by exact name match.
template <typename T>
void append_model_tensors(const ModelParams<T>& m, const std::string& prefix,
                          std::vector<CheckpointTensor>& out);
template <typename T>
void restore_model_tensors(ModelParams<T>& m, const std::string& prefix,
                           const std::vector<CheckpointTensor>& tensors);

}  // namespace mdcl
