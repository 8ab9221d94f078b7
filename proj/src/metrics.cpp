#include "mdcl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace mdcl {

namespace {

double median_of(std::vector<double> v) {
  const std::size_t n = v.size();
  const std::size_t mid = n / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (n % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

DepthMetrics one_image(const double* pred, const double* gt, std::int64_t n, double depth_cap,
                       bool median_scale) {
  std::vector<double> p, g;
  p.reserve(static_cast<std::size_t>(n));
  g.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    if (gt[i] > 0) {
      p.push_back(pred[i]);
      g.push_back(gt[i]);
    }
  }
  check(!p.empty(), "depth_metrics: image has no valid (gt > 0) pixels");

  double scale = 1.0;
  if (median_scale) {
    const double mp = median_of(p);
    check(mp > 0, "depth_metrics: non-positive median prediction under median scaling");
    scale = median_of(g) / mp;
  }

  double abs_rel = 0, mse = 0, a1 = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = std::clamp(p[i] * scale, kEvalMinDepth, depth_cap);
    const double ds = std::clamp(g[i], kEvalMinDepth, depth_cap);
    abs_rel += std::abs(d - ds) / ds;
    mse += (d - ds) * (d - ds);
    a1 += std::max(d / ds, ds / d) < 1.25 ? 1.0 : 0.0;
  }
  const double inv = 1.0 / static_cast<double>(p.size());
  return {abs_rel * inv, std::sqrt(mse * inv), a1 * inv};
}

}  // namespace

template <typename T>
DepthMetrics depth_metrics(const Tensor<T>& pred, const Tensor<T>& gt, double depth_cap,
                           bool median_scale) {
  check(pred.shape() == gt.shape(), "depth_metrics: shape mismatch " + shape_str(pred.shape()) +
                                        " vs " + shape_str(gt.shape()));
  check(depth_cap > kEvalMinDepth, "depth_metrics: depth_cap must exceed the evaluation floor");
  const auto& shape = pred.shape();
  check(shape.size() == 2 || shape.size() == 3, "depth_metrics: expected {H,W} or {N,H,W}");
  const std::int64_t n_img = shape.size() == 3 ? shape[0] : 1;
  const std::int64_t per = numel(shape) / n_img;

  std::vector<double> pv(pred.values().begin(), pred.values().end());
  std::vector<double> gv(gt.values().begin(), gt.values().end());
  std::vector<DepthMetrics> images;
  images.reserve(static_cast<std::size_t>(n_img));
  for (std::int64_t i = 0; i < n_img; ++i)
    images.push_back(one_image(pv.data() + i * per, gv.data() + i * per, per, depth_cap,
                               median_scale));
  return mean_metrics(images);
}

DepthMetrics mean_metrics(const std::vector<DepthMetrics>& per_image) {
  check(!per_image.empty(), "mean_metrics: empty list");
  DepthMetrics out;
  for (const auto& m : per_image) {
    out.abs_rel += m.abs_rel;
    out.rmse += m.rmse;
    out.a1 += m.a1;
  }
  const double inv = 1.0 / static_cast<double>(per_image.size());
  out.abs_rel *= inv;
  out.rmse *= inv;
  out.a1 *= inv;
  return out;
}

PerformanceMatrix::PerformanceMatrix(int n_tasks) : n_(n_tasks) {
  check(n_tasks >= 1, "PerformanceMatrix: need at least one task");
  cells_.resize(static_cast<std::size_t>(n_) * static_cast<std::size_t>(n_));
}

void PerformanceMatrix::set(int trained, int eval, const DepthMetrics& m) {
  check(trained >= 0 && trained < n_ && eval >= 0 && eval < n_,
        "PerformanceMatrix: index out of range");
  check(std::isfinite(m.abs_rel) && std::isfinite(m.rmse) && std::isfinite(m.a1),
        "PerformanceMatrix: non-finite metric entry");
  cells_[static_cast<std::size_t>(trained) * static_cast<std::size_t>(n_) +
         static_cast<std::size_t>(eval)] = m;
}

bool PerformanceMatrix::has(int trained, int eval) const {
  check(trained >= 0 && trained < n_ && eval >= 0 && eval < n_,
        "PerformanceMatrix: index out of range");
  return cells_[static_cast<std::size_t>(trained) * static_cast<std::size_t>(n_) +
                static_cast<std::size_t>(eval)]
      .has_value();
}

const DepthMetrics& PerformanceMatrix::at(int trained, int eval) const {
  check(has(trained, eval), "PerformanceMatrix: entry (" + std::to_string(trained + 1) + "," +
                                std::to_string(eval + 1) + ") not populated");
  return *cells_[static_cast<std::size_t>(trained) * static_cast<std::size_t>(n_) +
                 static_cast<std::size_t>(eval)];
}

double metric_value(const DepthMetrics& m, MetricKind k) {
  switch (k) {
    case MetricKind::AbsRel: return m.abs_rel;
    case MetricKind::Rmse: return m.rmse;
    case MetricKind::A1: return m.a1;
  }
  fail("metric_value: bad kind");
}

std::string metric_kind_name(MetricKind k) {
  switch (k) {
    case MetricKind::AbsRel: return "abs_rel";
    case MetricKind::Rmse: return "rmse";
    case MetricKind::A1: return "a1";
  }
  fail("metric_kind_name: bad kind");
}

double mu_final(const PerformanceMatrix& A, MetricKind k) {
  const int n = A.n_tasks();
  double s = 0;
  for (int j = 0; j < n; ++j) {
    check(A.has(n - 1, j), "mu_final: final row is missing entry (" + std::to_string(n) + "," +
                               std::to_string(j + 1) + ")");
    s += metric_value(A.at(n - 1, j), k);
  }
  return s / n;
}

double mu_overall(const PerformanceMatrix& A, MetricKind k) {
  const int n = A.n_tasks();
  double s = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) {
      check(A.has(i, j), "mu_overall: lower triangle is missing entry (" +
                             std::to_string(i + 1) + "," + std::to_string(j + 1) + ")");
      s += metric_value(A.at(i, j), k);
    }
  return 2.0 * s / (static_cast<double>(n) * (n + 1));
}

SptoResult spto(const PerformanceMatrix& A, MetricKind k, SptoNorm norm) {
  const int n = A.n_tasks();
  check(n >= 2, "spto: need at least two tasks");
  SptoResult r;
  for (int j = 0; j + 1 < n; ++j) {
    check(A.has(n - 1, j), "spto: final row is missing entry (" + std::to_string(n) + "," +
                               std::to_string(j + 1) + ")");
    r.stability += metric_value(A.at(n - 1, j), k);
  }
  r.stability /= norm == SptoNorm::PaperLiteral ? n : (n - 1);
  for (int i = 0; i < n; ++i) {
    check(A.has(i, i), "spto: diagonal is missing entry (" + std::to_string(i + 1) + "," +
                           std::to_string(i + 1) + ")");
    r.plasticity += metric_value(A.at(i, i), k);
  }
  r.plasticity /= n;
  const double denom = r.stability + r.plasticity;
  r.spto = denom == 0 ? 0.0 : 2.0 * r.stability * r.plasticity / denom;
  return r;
}

std::string matrix_to_csv(const PerformanceMatrix& A) {
  std::string out = "trained_task,eval_task,abs_rel,rmse,a1\n";
  char line[160];
  for (int i = 0; i < A.n_tasks(); ++i)
    for (int j = 0; j < A.n_tasks(); ++j) {
      if (!A.has(i, j)) continue;
      const DepthMetrics& m = A.at(i, j);
      std::snprintf(line, sizeof line, "%d,%d,%.17g,%.17g,%.17g\n", i + 1, j + 1, m.abs_rel,
                    m.rmse, m.a1);
      out += line;
    }
  return out;
}

PerformanceMatrix matrix_from_csv(const std::string& text) {
  std::istringstream is(text);
  std::string header;
  check(static_cast<bool>(std::getline(is, header)), "matrix csv: empty input");
  if (!header.empty() && header.back() == '\r') header.pop_back();
  check(header == "trained_task,eval_task,abs_rel,rmse,a1",
        "matrix csv: unexpected header '" + header + "'");

  struct Row {
    int i, j;
    DepthMetrics m;
  };
  std::vector<Row> rows;
  int n = 0;
  std::string line;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    Row r;
    const int got = std::sscanf(line.c_str(), "%d,%d,%lf,%lf,%lf", &r.i, &r.j, &r.m.abs_rel,
                                &r.m.rmse, &r.m.a1);
    check(got == 5, "matrix csv: malformed line " + std::to_string(line_no) + ": '" + line + "'");
    check(r.i >= 1 && r.j >= 1, "matrix csv: task indices are 1-based, line " +
                                    std::to_string(line_no));
    n = std::max({n, r.i, r.j});
    rows.push_back(r);
  }
  check(n >= 1, "matrix csv: no data rows");
  PerformanceMatrix A(n);
  for (const Row& r : rows) A.set(r.i - 1, r.j - 1, r.m);
  return A;
}

template DepthMetrics depth_metrics<float>(const Tensor<float>&, const Tensor<float>&, double,
                                           bool);
template DepthMetrics depth_metrics<double>(const Tensor<double>&, const Tensor<double>&, double,
                                            bool);

}  // namespace mdcl
