#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "mdcl/continual.hpp"
#include "mdcl/metrics.hpp"
#include "mdcl/synthdata.hpp"

namespace mdcl {

// Exit codes shared by every subcommand: 0 ok, 2 input/config error,
// 3 numerical failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitNumeric = 3;

// Name of the environment variable overriding the seed in generate specs and
// experiment configs.
inline constexpr const char* kSeedEnvVar = "MDCL_SEED";

// Parsed `generate` spec: either the default 4-task suite for a master seed,
// or an explicit task list.
struct GenerateSpec {
  std::uint64_t master_seed = 7;
  std::int64_t n_train = 1000;
  std::int64_t n_test = 100;
  std::vector<SceneSpec> tasks;  // empty -> default_task_suite(master_seed)

  static GenerateSpec from_json_text(const std::string& text);
};

// Everything one continual run needs. Weights and schedule defaults follow
// the reference protocol; epochs are desk-scale by default.
struct ExperimentConfig {
  std::vector<std::string> task_dirs;  // each holding train/ and test/ splits
  Method method = Method::MonoDepthCL;
  std::int64_t buffer_capacity = 200;
  double beta = 0.1;
  double rho = 0.85;
  double smooth_lambda = 1e-3;
  double alpha = 0.999;
  double nu = 0.05;
  bool warmup = true;
  bool random_crop = true;
  bool learn_intrinsics = false;
  int epochs_per_task = 5;
  double lr = 1e-4;
  int lr_decay_epoch = 4;  // lr * 0.1 from this 1-based epoch onward
  int batch_size = 8;
  int rehearsal_batch = 8;
  std::uint64_t seed = 1;
  std::string out_dir = "run";
  int height = 64, width = 96, base_channels = 16;
  double min_depth = 0, max_depth = 0;  // 0 -> derived from the task manifests
  bool eval_all_tasks = false;          // also fill the upper-triangle diagnostics

  void validate() const;
  static ExperimentConfig from_json_text(const std::string& text);
  std::string to_json_text() const;
};

struct TrainOutputs {
  PerformanceMatrix matrix{1};
  std::vector<std::string> eval_checkpoints;  // per task row, the model the matrix used
  std::string matrix_csv;
  std::string loss_log_csv;
  std::string working_checkpoint;
  std::string context_checkpoint;
};

// Raised when a training loss goes non-finite; carries the offending
// task/epoch/iteration in the message.
struct NanLossError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Full continual (or joint) run; writes all artifacts under cfg.out_dir and
// streams progress lines to `log`.
TrainOutputs run_training(const ExperimentConfig& cfg, std::ostream& log);

// Mean depth metrics of one dataset split directory under a single model.
// The clamp cap comes from the split's manifest; predictions are
// median-scaled.
DepthMetrics evaluate_dir(const ModelParams<float>& model, const NetworkConfig& net,
                          double min_depth, double max_depth, const std::string& dir);

// A restored model checkpoint plus the metadata the evaluator needs.
struct LoadedModel {
  NetworkConfig net;
  ModelParams<float> params;
  double min_depth = 0.1, max_depth = 100;
  std::string method = "NCT";
  std::string meta_json;
};
LoadedModel load_model(const std::string& path);  // runtime_error on bad files

int cmd_generate(const std::string& spec_path, const std::string& out_dir, std::ostream& log);
int cmd_train(const std::string& config_path, std::ostream& log);
int cmd_eval(const std::string& checkpoint_path, const std::vector<std::string>& task_dirs,
             const std::string& out_path, std::ostream& log);
int cmd_report(const std::string& matrix_path, const std::string& out_dir, std::ostream& log);

}  // namespace mdcl
