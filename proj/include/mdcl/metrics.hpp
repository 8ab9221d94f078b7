#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mdcl/tensor.hpp"

namespace mdcl {

struct DepthMetrics {
  double abs_rel = 0;
  double rmse = 0;   // scene units
  double a1 = 0;     // fraction under the 1.25 ratio threshold
};

// Evaluation floor paired with the per-task depth cap when clamping.
inline constexpr double kEvalMinDepth = 1e-3;

// Standard depth metrics over {H,W} or {N,H,W} maps, averaged over images.
// Valid pixels are those with gt > 0; median scaling multiplies pred by
// median(gt)/median(pred) per image; both maps are then clamped to
// [kEvalMinDepth, depth_cap]. Throws when an image has no valid pixel.
template <typename T>
DepthMetrics depth_metrics(const Tensor<T>& pred, const Tensor<T>& gt, double depth_cap,
                           bool median_scale);

// Plain mean of per-image metric structs (used by dataset-level evaluation).
DepthMetrics mean_metrics(const std::vector<DepthMetrics>& per_image);

// Task-wise performance matrix: entry (trained, eval) holds the metrics on
// task `eval` after training through task `trained`. Indices are 0-based in
// the API and 1-based in the CSV. Aggregates use the lower triangle
// (trained >= eval) only.
class PerformanceMatrix {
 public:
  explicit PerformanceMatrix(int n_tasks);

  int n_tasks() const { return n_; }
  void set(int trained, int eval, const DepthMetrics& m);
  bool has(int trained, int eval) const;
  const DepthMetrics& at(int trained, int eval) const;  // error when unset

 private:
  int n_;
  std::vector<std::optional<DepthMetrics>> cells_;
};

enum class MetricKind { AbsRel, Rmse, A1 };
double metric_value(const DepthMetrics& m, MetricKind k);
std::string metric_kind_name(MetricKind k);

// Mean of the final row: (1/n_t) sum_j A[n_t, j]. Errors on an
// incomplete final row.
double mu_final(const PerformanceMatrix& A, MetricKind k);

// Mean over the lower triangle: (2/(n_t(n_t+1))) sum_{i>=j} A[i, j].
// Errors on an incomplete triangle.
double mu_overall(const PerformanceMatrix& A, MetricKind k);

struct SptoResult {
  double stability = 0;   // A_S
  double plasticity = 0;  // A_P
  double spto = 0;        // harmonic mean; 0 when A_S + A_P = 0
};

// paper_literal: A_S = (1/n_t) sum_{j<n_t} A[n_t, j] (a sum of n_t - 1 terms
// divided by n_t, as printed); per_term divides by n_t - 1 instead.
enum class SptoNorm { PaperLiteral, PerTerm };

SptoResult spto(const PerformanceMatrix& A, MetricKind k,
                SptoNorm norm = SptoNorm::PaperLiteral);  // requires n_t >= 2

// CSV with header "trained_task,eval_task,abs_rel,rmse,a1", one row per
// populated entry, 1-based task indices, row-major order.
std::string matrix_to_csv(const PerformanceMatrix& A);
PerformanceMatrix matrix_from_csv(const std::string& text);  // errors are descriptive

}  // namespace mdcl
