#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "mdcl/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"monodepthcl: continual unsupervised monocular depth"};
  app.require_subcommand(1);

  std::string spec_path, gen_out;
  CLI::App* generate = app.add_subcommand("generate", "Render a synthetic multi-task dataset");
  generate->add_option("--spec", spec_path, "Generation spec JSON")->required();
  generate->add_option("--out", gen_out, "Output directory")->required();

  std::string config_path;
  CLI::App* train = app.add_subcommand("train", "Train over a task sequence");
  train->add_option("--config", config_path, "Experiment config JSON")->required();

  std::string ckpt_path, eval_out;
  std::vector<std::string> task_dirs;
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on task test splits");
  eval->add_option("--checkpoint", ckpt_path, "Model checkpoint")->required();
  eval->add_option("--tasks", task_dirs, "Task or split directories")->required();
  eval->add_option("--out", eval_out, "Also write the metrics JSON here");

  std::string matrix_path, report_out;
  CLI::App* report = app.add_subcommand("report", "Summarize a performance matrix");
  report->add_option("--matrix", matrix_path, "Performance matrix CSV")->required();
  report->add_option("--out", report_out, "Report output directory")->required();

  CLI11_PARSE(app, argc, argv);

  if (generate->parsed()) return mdcl::cmd_generate(spec_path, gen_out, std::cout);
  if (train->parsed()) return mdcl::cmd_train(config_path, std::cout);
  if (eval->parsed()) return mdcl::cmd_eval(ckpt_path, task_dirs, eval_out, std::cout);
  if (report->parsed()) return mdcl::cmd_report(matrix_path, report_out, std::cout);
  return mdcl::kExitInput;
}
