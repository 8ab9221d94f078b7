#include "mdcl/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "mdcl/geometry.hpp"

namespace mdcl {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void atomic_write_text(const fs::path& path, const std::string& text) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out << text;
    if (!out) throw std::runtime_error("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

void reject_unknown_keys(const json& j, const std::set<std::string>& allowed,
                         const std::string& what) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.contains(it.key()))
      throw std::invalid_argument(what + ": unknown key '" + it.key() + "'");
}

// MDCL_SEED, when set, overrides the seed of both generate specs and
// experiment configs.
bool seed_override(std::uint64_t& seed) {
  const char* v = std::getenv(kSeedEnvVar);
  if (v == nullptr || *v == '\0') return false;
  char* end = nullptr;
  unsigned long long parsed = std::strtoull(v, &end, 10);
  if (end == nullptr || *end != '\0')
    throw std::invalid_argument(std::string(kSeedEnvVar) + " is not an unsigned integer: " + v);
  seed = parsed;
  return true;
}

SceneSpec scene_spec_from_json(const json& j, std::uint64_t master_seed) {
  reject_unknown_keys(j, {"name", "height", "width", "d_min", "d_max", "plane_count",
                          "tex_freq_lo", "tex_freq_hi", "brightness", "fx", "fy", "cx", "cy",
                          "trans_std", "rot_std", "seed"},
                      "task spec");
  SceneSpec s;
  s.name = j.value("name", s.name);
  s.height = j.value("height", s.height);
  s.width = j.value("width", s.width);
  s.d_min = j.value("d_min", s.d_min);
  s.d_max = j.value("d_max", s.d_max);
  s.plane_count = j.value("plane_count", s.plane_count);
  s.tex_freq_lo = j.value("tex_freq_lo", s.tex_freq_lo);
  s.tex_freq_hi = j.value("tex_freq_hi", s.tex_freq_hi);
  s.brightness = j.value("brightness", s.brightness);
  s.fx = j.value("fx", s.fx);
  s.fy = j.value("fy", s.fy);
  s.cx = j.value("cx", s.cx);
  s.cy = j.value("cy", s.cy);
  s.trans_std = j.value("trans_std", s.trans_std);
  s.rot_std = j.value("rot_std", s.rot_std);
  s.seed = j.value("seed", splitmix64(master_seed ^ fnv1a64(s.name)));
  s.validate();
  return s;
}

// Split layout inside a task directory.
std::string train_split(const std::string& task_dir) { return (fs::path(task_dir) / "train").string(); }
std::string test_split(const std::string& task_dir) { return (fs::path(task_dir) / "test").string(); }

// `eval` accepts either a task directory (with a test/ split) or a split
// directory holding manifest.json directly.
std::string resolve_split(const std::string& dir) {
  if (fs::exists(fs::path(dir) / "manifest.json")) return dir;
  if (fs::exists(fs::path(test_split(dir)) / "manifest.json")) return test_split(dir);
  throw std::runtime_error("no manifest.json under " + dir + " or its test/ split");
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

BufferItem<float> triplet_to_item(const Triplet& t, const TaskManifest& m, int task_id,
                                  bool use_gt_intrinsics) {
  BufferItem<float> item;
  item.target = t.target;
  item.sources = {t.prev, t.next};
  item.task_id = task_id;
  item.has_intrinsics = use_gt_intrinsics;
  if (use_gt_intrinsics)
    item.K = CameraIntrinsics<float>::from_values(
        static_cast<float>(m.fx), static_cast<float>(m.fy), static_cast<float>(m.cx),
        static_cast<float>(m.cy));
  item.depth_cap = static_cast<float>(m.d_max);
  return item;
}

json metrics_to_json(const DepthMetrics& m) {
  return {{"abs_rel", m.abs_rel}, {"rmse", m.rmse}, {"a1", m.a1}};
}

std::string checkpoint_meta(const ExperimentConfig& cfg, const std::string& role,
                            int task_index, double min_depth, double max_depth) {
  json j = {{"format", "mdcl-model"},
            {"role", role},
            {"method", method_name(cfg.method)},
            {"task_index", task_index},
            {"seed", cfg.seed},
            {"min_depth", min_depth},
            {"max_depth", max_depth},
            {"network",
             {{"height", cfg.height},
              {"width", cfg.width},
              {"base_channels", cfg.base_channels},
              {"learn_intrinsics", cfg.learn_intrinsics}}}};
  return j.dump();
}

void save_model(const std::string& path, const ModelParams<float>& m, const std::string& meta) {
  std::vector<CheckpointTensor> tensors;
  append_model_tensors(m, "", tensors);
  save_checkpoint(path, meta, tensors);
}

}  // namespace

LoadedModel load_model(const std::string& path) {
  std::string meta_text;
  std::vector<CheckpointTensor> tensors;
  load_checkpoint(path, meta_text, tensors);
  json meta;
  try {
    meta = json::parse(meta_text);
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": checkpoint meta is not valid JSON: " + e.what());
  }
  if (meta.value("format", "") != "mdcl-model")
    throw std::runtime_error(path + ": not a model checkpoint");
  const json& n = meta.at("network");
  NetworkConfig net;
  net.height = n.at("height").get<int>();
  net.width = n.at("width").get<int>();
  net.base_channels = n.at("base_channels").get<int>();
  net.learn_intrinsics = n.at("learn_intrinsics").get<bool>();
  net.validate();
  LoadedModel out{net, ModelParams<float>(net, 0), meta.value("min_depth", 0.1),
                  meta.value("max_depth", 100.0), meta.value("method", std::string("NCT")),
                  meta};
  restore_model_tensors(out.params, "", tensors);
  return out;
}

struct LossLogRow {
  int epoch;  // 1-based within the task
  int task;   // 1-based
  double depth, stc, total;
};

std::string loss_log_to_csv(const std::vector<LossLogRow>& rows) {
  std::string csv = "epoch,task,L_depth,L_STC,L_total\n";
  for (const LossLogRow& r : rows) {
    csv += std::to_string(r.epoch) + "," + std::to_string(r.task) + "," + format_double(r.depth) +
           "," + format_double(r.stc) + "," + format_double(r.total) + "\n";
  }
  return csv;
}

}  // namespace

GenerateSpec GenerateSpec::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("generate spec is not valid JSON: ") + e.what());
  }
  reject_unknown_keys(j, {"master_seed", "n_train", "n_test", "tasks"}, "generate spec");
  GenerateSpec spec;
  spec.master_seed = j.value("master_seed", spec.master_seed);
  seed_override(spec.master_seed);
  spec.n_train = j.value("n_train", spec.n_train);
  spec.n_test = j.value("n_test", spec.n_test);
  if (spec.n_train < 1 || spec.n_test < 0)
    throw std::invalid_argument("generate spec: need n_train >= 1 and n_test >= 0");
  if (j.contains("tasks")) {
    if (!j["tasks"].is_array()) throw std::invalid_argument("generate spec: tasks must be a list");
    for (const json& t : j["tasks"]) spec.tasks.push_back(scene_spec_from_json(t, spec.master_seed));
    std::set<std::string> names;
    for (const SceneSpec& t : spec.tasks) names.insert(t.name);
    if (names.size() != spec.tasks.size())
      throw std::invalid_argument("generate spec: task names must be unique");
    if (spec.tasks.empty()) throw std::invalid_argument("generate spec: tasks list is empty");
  }
  return spec;
}

void ExperimentConfig::validate() const {
  if (task_dirs.empty()) throw std::invalid_argument("config: need at least one task directory");
  if (epochs_per_task < 1) throw std::invalid_argument("config: epochs_per_task must be >= 1");
  if (beta < 0 || rho < 0 || smooth_lambda < 0 || alpha < 0 || nu < 0)
    throw std::invalid_argument("config: loss and EMA weights must be >= 0");
  if (alpha > 1 || nu > 1 || rho > 1)
    throw std::invalid_argument("config: alpha, nu, and rho must lie in [0, 1]");
  if (buffer_capacity < 0) throw std::invalid_argument("config: buffer_capacity must be >= 0");
  if (batch_size < 1 || rehearsal_batch < 0)
    throw std::invalid_argument("config: batch_size must be >= 1 and rehearsal_batch >= 0");
  if (lr <= 0) throw std::invalid_argument("config: lr must be positive");
  if (lr_decay_epoch < 1) throw std::invalid_argument("config: lr_decay_epoch must be >= 1");
  if (out_dir.empty()) throw std::invalid_argument("config: out_dir must be set");
  if ((min_depth == 0) != (max_depth == 0))
    throw std::invalid_argument("config: set both min_depth and max_depth or neither");
  if (min_depth != 0 && (min_depth <= 0 || min_depth >= max_depth))
    throw std::invalid_argument("config: need 0 < min_depth < max_depth");
  NetworkConfig net{height, width, base_channels, learn_intrinsics};
  net.validate();
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("config is not valid JSON: ") + e.what());
  }
  reject_unknown_keys(
      j, {"tasks", "method", "buffer_capacity", "beta", "rho", "lambda", "alpha", "nu",
          "warmup", "random_crop", "learn_intrinsics", "epochs_per_task", "lr",
          "lr_decay_epoch", "batch_size", "rehearsal_batch", "seed", "out_dir", "height",
          "width", "base_channels", "min_depth", "max_depth", "eval_all_tasks"},
      "config");
  ExperimentConfig c;
  if (!j.contains("tasks") || !j["tasks"].is_array())
    throw std::invalid_argument("config: 'tasks' must be a list of task directories");
  for (const json& t : j["tasks"]) c.task_dirs.push_back(t.get<std::string>());
  c.method = method_from_string(j.value("method", std::string("MonoDepthCL")));
  c.buffer_capacity = j.value("buffer_capacity", c.buffer_capacity);
  c.beta = j.value("beta", c.beta);
  c.rho = j.value("rho", c.rho);
  c.smooth_lambda = j.value("lambda", c.smooth_lambda);
  c.alpha = j.value("alpha", c.alpha);
  c.nu = j.value("nu", c.nu);
  c.warmup = j.value("warmup", c.warmup);
  c.random_crop = j.value("random_crop", c.random_crop);
  c.learn_intrinsics = j.value("learn_intrinsics", c.learn_intrinsics);
  c.epochs_per_task = j.value("epochs_per_task", c.epochs_per_task);
  c.lr = j.value("lr", c.lr);
  c.lr_decay_epoch = j.value("lr_decay_epoch", c.lr_decay_epoch);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.rehearsal_batch = j.value("rehearsal_batch", c.rehearsal_batch);
  c.seed = j.value("seed", c.seed);
  seed_override(c.seed);
  c.out_dir = j.value("out_dir", c.out_dir);
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.base_channels = j.value("base_channels", c.base_channels);
  c.min_depth = j.value("min_depth", c.min_depth);
  c.max_depth = j.value("max_depth", c.max_depth);
  c.eval_all_tasks = j.value("eval_all_tasks", c.eval_all_tasks);
  c.validate();
  return c;
}

std::string ExperimentConfig::to_json_text() const {
  json j = {{"tasks", task_dirs},
            {"method", method_name(method)},
            {"buffer_capacity", buffer_capacity},
            {"beta", beta},
            {"rho", rho},
            {"lambda", smooth_lambda},
            {"alpha", alpha},
            {"nu", nu},
            {"warmup", warmup},
            {"random_crop", random_crop},
            {"learn_intrinsics", learn_intrinsics},
            {"epochs_per_task", epochs_per_task},
            {"lr", lr},
            {"lr_decay_epoch", lr_decay_epoch},
            {"batch_size", batch_size},
            {"rehearsal_batch", rehearsal_batch},
            {"seed", seed},
            {"out_dir", out_dir},
            {"height", height},
            {"width", width},
            {"base_channels", base_channels},
            {"min_depth", min_depth},
            {"max_depth", max_depth},
            {"eval_all_tasks", eval_all_tasks}};
  return j.dump(2) + "\n";
}

DepthMetrics evaluate_dir(const ModelParams<float>& model, const NetworkConfig& net,
                          double min_depth, double max_depth, const std::string& dir) {
  auto [manifest, samples] = read_dataset(resolve_split(dir));
  if (manifest.height != net.height || manifest.width != net.width)
    throw std::runtime_error(dir + ": dataset is " + std::to_string(manifest.height) + "x" +
                             std::to_string(manifest.width) + " but the model expects " +
                             std::to_string(net.height) + "x" + std::to_string(net.width));
  if (samples.empty()) throw std::runtime_error(dir + ": empty evaluation split");
  std::vector<DepthMetrics> per_image;
  per_image.reserve(samples.size());
  for (const Triplet& t : samples) {
    std::vector<TensorF> disps = depth_forward(t.target, model);
    TensorF pred = disp_to_depth(disps.back(), static_cast<float>(min_depth),
                                 static_cast<float>(max_depth));
    per_image.push_back(depth_metrics(pred, t.depth, manifest.d_max, true));
  }
  return mean_metrics(per_image);
}

TrainOutputs run_training(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.validate();
  const int n_tasks = static_cast<int>(cfg.task_dirs.size());

  // Resolve the disparity decode range before touching any weights.
  std::vector<TaskManifest> manifests;
  for (const std::string& dir : cfg.task_dirs) manifests.push_back(read_manifest(train_split(dir)));
  double min_depth = cfg.min_depth, max_depth = cfg.max_depth;
  if (min_depth == 0) {
    min_depth = manifests[0].d_min;
    max_depth = manifests[0].d_max;
    for (const TaskManifest& m : manifests) {
      min_depth = std::min(min_depth, m.d_min);
      max_depth = std::max(max_depth, m.d_max);
    }
  }

  NetworkConfig net{cfg.height, cfg.width, cfg.base_channels, cfg.learn_intrinsics};
  DualModel<float> dual(net, cfg.seed, static_cast<float>(cfg.alpha),
                        static_cast<float>(cfg.nu));
  Adam<float> opt(optimizer_params(dual.working()), static_cast<float>(cfg.lr));
  ReplayBuffer<float> buffer(method_uses_rehearsal(cfg.method) ? cfg.buffer_capacity : 0,
                             splitmix64(cfg.seed ^ fnv1a64("buffer")));
  Rng crop_rng = Rng::stream(cfg.seed, "crop");
  Rng order_rng = Rng::stream(cfg.seed, "order");

  TrainStepConfig<float> step_cfg;
  step_cfg.cl.method = cfg.method;
  step_cfg.cl.beta = static_cast<float>(cfg.beta);
  step_cfg.cl.warmup = cfg.warmup;
  step_cfg.cl.random_crop = cfg.random_crop;
  step_cfg.cl.rehearsal_batch = cfg.rehearsal_batch;
  step_cfg.loss.rho = static_cast<float>(cfg.rho);
  step_cfg.loss.lambda = static_cast<float>(cfg.smooth_lambda);
  step_cfg.min_depth = static_cast<float>(min_depth);
  step_cfg.max_depth = static_cast<float>(max_depth);

  fs::create_directories(cfg.out_dir);
  TrainOutputs out;
  out.matrix = PerformanceMatrix(cfg.method == Method::Joint ? 1 : n_tasks);
  std::vector<LossLogRow> loss_rows;
  std::int64_t global_iter = 0;

  // Joint training sees one merged, shuffled pool for the whole epoch budget;
  // continual methods see tasks strictly in order.
  struct TaskData {
    std::vector<BufferItem<float>> items;
  };
  auto load_task = [&](int t) {
    auto [manifest, samples] = read_dataset(train_split(cfg.task_dirs[static_cast<std::size_t>(t)]));
    TaskData data;
    data.items.reserve(samples.size());
    for (const Triplet& s : samples)
      data.items.push_back(triplet_to_item(s, manifest, t + 1, !cfg.learn_intrinsics));
    return data;
  };

  auto run_epoch = [&](std::vector<BufferItem<float>>& pool, int task_index, int epoch,
                       int log_task) {
    opt.set_lr(static_cast<float>(cfg.lr * (epoch >= cfg.lr_decay_epoch ? 0.1 : 1.0)));
    std::vector<std::size_t> order(pool.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(order_rng.uniform_int(i))]);

    step_cfg.task_index = task_index;
    double sum_depth = 0, sum_stc = 0, sum_total = 0;
    std::int64_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<BufferItem<float>> batch;
      batch.reserve(stop - start);
      for (std::size_t k = start; k < stop; ++k) batch.push_back(pool[order[k]]);
      StepLosses<float> losses;
      ++global_iter;
      std::string where = "task " + std::to_string(log_task) + " epoch " +
                          std::to_string(epoch) + " iteration " + std::to_string(global_iter);
      try {
        losses = train_step(batch, buffer, dual, opt, step_cfg, crop_rng);
      } catch (const std::runtime_error& e) {
        // Value-driven failures inside a step (non-finite gradients, collapsed
        // depths) are numerical failures; config errors are invalid_argument
        // and propagate as input errors.
        throw NanLossError("numerical failure at " + where + ": " + e.what());
      }
      if (!std::isfinite(losses.total)) throw NanLossError("non-finite loss at " + where);
      sum_depth += losses.depth;
      sum_stc += losses.stc;
      sum_total += losses.total;
      ++steps;
    }
    loss_rows.push_back({epoch, log_task, sum_depth / static_cast<double>(steps),
                         sum_stc / static_cast<double>(steps),
                         sum_total / static_cast<double>(steps)});
    log << "task " << log_task << " epoch " << epoch << ": L_depth "
        << loss_rows.back().depth << " L_STC " << loss_rows.back().stc << " L_total "
        << loss_rows.back().total << "\n";
  };

  auto save_and_eval_row = [&](int row, int eval_through) {
    const ModelParams<float>& model = eval_model(dual, cfg.method);
    char name[40];
    std::snprintf(name, sizeof(name), "checkpoint_task_%02d.bin", row + 1);
    std::string ckpt_path = (fs::path(cfg.out_dir) / name).string();
    save_model(ckpt_path, model,
               checkpoint_meta(cfg, "eval", row + 1, min_depth, max_depth));
    out.eval_checkpoints.push_back(ckpt_path);
    for (int j = 0; j < eval_through; ++j) {
      DepthMetrics m =
          evaluate_dir(model, net, min_depth, max_depth,
                       test_split(cfg.task_dirs[static_cast<std::size_t>(j)]));
      out.matrix.set(row, j, m);
      log << "  eval task " << (j + 1) << ": abs_rel " << m.abs_rel << " rmse " << m.rmse
          << " a1 " << m.a1 << "\n";
    }
  };

  if (cfg.method == Method::Joint) {
    std::vector<BufferItem<float>> pool;
    for (int t = 0; t < n_tasks; ++t) {
      TaskData data = load_task(t);
      pool.insert(pool.end(), data.items.begin(), data.items.end());
    }
    int total_epochs = cfg.epochs_per_task * n_tasks;
    for (int e = 1; e <= total_epochs; ++e) run_epoch(pool, 1, e, 1);
    // One merged evaluation row: per-image metrics pooled across every task.
    const ModelParams<float>& model = eval_model(dual, cfg.method);
    std::string ckpt_path = (fs::path(cfg.out_dir) / "checkpoint_task_01.bin").string();
    save_model(ckpt_path, model, checkpoint_meta(cfg, "eval", 1, min_depth, max_depth));
    out.eval_checkpoints.push_back(ckpt_path);
    std::vector<DepthMetrics> merged;
    for (int j = 0; j < n_tasks; ++j) {
      auto [manifest, samples] =
          read_dataset(test_split(cfg.task_dirs[static_cast<std::size_t>(j)]));
      for (const Triplet& s : samples) {
        std::vector<TensorF> disps = depth_forward(s.target, model);
        TensorF pred = disp_to_depth(disps.back(), static_cast<float>(min_depth),
                                     static_cast<float>(max_depth));
        merged.push_back(depth_metrics(pred, s.depth, manifest.d_max, true));
      }
    }
    out.matrix.set(0, 0, mean_metrics(merged));
  } else {
    for (int t = 0; t < n_tasks; ++t) {
      TaskData data = load_task(t);
      log << "training task " << (t + 1) << " (" << manifests[static_cast<std::size_t>(t)].name
          << ", " << data.items.size() << " samples)\n";
      for (int e = 1; e <= cfg.epochs_per_task; ++e) run_epoch(data.items, t + 1, e, t + 1);
      save_and_eval_row(t, cfg.eval_all_tasks ? n_tasks : t + 1);
    }
  }

  out.matrix_csv = (fs::path(cfg.out_dir) / "matrix.csv").string();
  atomic_write_text(out.matrix_csv, matrix_to_csv(out.matrix));
  out.loss_log_csv = (fs::path(cfg.out_dir) / "loss_log.csv").string();
  atomic_write_text(out.loss_log_csv, loss_log_to_csv(loss_rows));
  out.working_checkpoint = (fs::path(cfg.out_dir) / "working_final.bin").string();
  save_model(out.working_checkpoint, dual.working(),
             checkpoint_meta(cfg, "working", n_tasks, min_depth, max_depth));
  out.context_checkpoint = (fs::path(cfg.out_dir) / "context_final.bin").string();
  save_model(out.context_checkpoint, dual.context(),
             checkpoint_meta(cfg, "context", n_tasks, min_depth, max_depth));
  return out;
}

int cmd_generate(const std::string& spec_path, const std::string& out_dir, std::ostream& log) {
  try {
    GenerateSpec spec = GenerateSpec::from_json_text(read_text_file(spec_path));
    std::vector<SceneSpec> tasks =
        spec.tasks.empty() ? default_task_suite(spec.master_seed) : spec.tasks;
    for (const SceneSpec& task : tasks) {
      std::vector<Triplet> all = generate_task(task, spec.n_train + spec.n_test);
      std::vector<Triplet> train(all.begin(), all.begin() + spec.n_train);
      std::vector<Triplet> test(all.begin() + spec.n_train, all.end());
      fs::path dir = fs::path(out_dir) / task.name;
      write_dataset((dir / "train").string(), manifest_from_spec(task, spec.n_train), train);
      write_dataset((dir / "test").string(), manifest_from_spec(task, spec.n_test), test);
      log << "task " << task.name << ": " << spec.n_train << " train / " << spec.n_test
          << " test -> " << dir.string() << "\n";
    }
    return kExitOk;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return kExitInput;
  }
}

int cmd_train(const std::string& config_path, std::ostream& log) {
  try {
    ExperimentConfig cfg = ExperimentConfig::from_json_text(read_text_file(config_path));
    TrainOutputs out = run_training(cfg, log);
    log << "wrote " << out.matrix_csv << "\n";
    return kExitOk;
  } catch (const NanLossError& e) {
    log << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return kExitInput;
  }
}

int cmd_eval(const std::string& checkpoint_path, const std::vector<std::string>& task_dirs,
             const std::string& out_path, std::ostream& log) {
  try {
    if (task_dirs.empty()) throw std::invalid_argument("eval: no task directories given");
    LoadedModel model = load_model(checkpoint_path);
    json tasks = json::array();
    for (const std::string& dir : task_dirs) {
      std::string split = resolve_split(dir);
      TaskManifest manifest = read_manifest(split);
      DepthMetrics m =
          evaluate_dir(model.params, model.net, model.min_depth, model.max_depth, split);
      json row = metrics_to_json(m);
      row["name"] = manifest.name;
      row["dir"] = dir;
      row["n_samples"] = manifest.n_samples;
      tasks.push_back(row);
    }
    json report = {{"checkpoint", checkpoint_path}, {"method", model.method}, {"tasks", tasks}};
    std::string text = report.dump(2) + "\n";
    log << text;
    if (!out_path.empty()) atomic_write_text(out_path, text);
    return kExitOk;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return kExitInput;
  }
}

int cmd_report(const std::string& matrix_path, const std::string& out_dir, std::ostream& log) {
  try {
    PerformanceMatrix A = matrix_from_csv(read_text_file(matrix_path));
    std::string missing;
    for (int i = 0; i < A.n_tasks(); ++i)
      for (int j = 0; j <= i; ++j)
        if (!A.has(i, j)) missing += " (" + std::to_string(i + 1) + "," + std::to_string(j + 1) + ")";
    if (!missing.empty()) {
      log << "error: incomplete matrix; missing entries:" << missing << "\n";
      return kExitInput;
    }

    // Both SPTO normalizations: "spto" follows the printed stability formula
    // (sum of n_t - 1 terms divided by n_t); "spto_per_term" divides by
    // n_t - 1, so a constant matrix c reports c.
    const bool with_spto = A.n_tasks() >= 2;
    json report = {{"n_tasks", A.n_tasks()}, {"metrics", json::object()}};
    std::ostringstream table;
    table << "metric        mu_final    mu_overall";
    if (with_spto) table << "          SPTO     SPTO/term";
    table << "\n";
    for (MetricKind k : {MetricKind::AbsRel, MetricKind::Rmse, MetricKind::A1}) {
      double f = mu_final(A, k), o = mu_overall(A, k);
      json entry = {{"mu_final", f}, {"mu_overall", o}};
      char line[160];
      if (with_spto) {
        SptoResult s = spto(A, k);
        SptoResult st = spto(A, k, SptoNorm::PerTerm);
        entry["spto"] = s.spto;
        entry["spto_per_term"] = st.spto;
        entry["stability"] = s.stability;
        entry["plasticity"] = s.plasticity;
        std::snprintf(line, sizeof(line), "%-10s%12.6f%14.6f%14.6f%14.6f\n",
                      metric_kind_name(k).c_str(), f, o, s.spto, st.spto);
      } else {
        std::snprintf(line, sizeof(line), "%-10s%12.6f%14.6f\n", metric_kind_name(k).c_str(), f,
                      o);
      }
      report["metrics"][metric_kind_name(k)] = entry;
      table << line;
    }

    fs::create_directories(out_dir);
    atomic_write_text(fs::path(out_dir) / "report.json", report.dump(2) + "\n");
    atomic_write_text(fs::path(out_dir) / "report.txt", table.str());
    for (MetricKind k : {MetricKind::AbsRel, MetricKind::Rmse, MetricKind::A1}) {
      std::string csv = "trained\\eval";
      for (int j = 0; j < A.n_tasks(); ++j) csv += "," + std::to_string(j + 1);
      csv += "\n";
      for (int i = 0; i < A.n_tasks(); ++i) {
        csv += std::to_string(i + 1);
        for (int j = 0; j < A.n_tasks(); ++j)
          csv += "," + (A.has(i, j) ? format_double(metric_value(A.at(i, j), k)) : std::string());
        csv += "\n";
      }
      atomic_write_text(fs::path(out_dir) / ("heatmap_" + metric_kind_name(k) + ".csv"), csv);
    }
    log << table.str();
    return kExitOk;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return kExitInput;
  }
}

}  // namespace mdcl
