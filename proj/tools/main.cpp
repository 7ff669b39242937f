#include "kinodrive/config.hpp"
#include "kinodrive/experiment.hpp"
#include "kinodrive/plot.hpp"

#include "oracles.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <iostream>

using namespace kinodrive;

namespace {

int cmd_selftest(const std::string& filter, bool core_only) {
  const auto t0 = std::chrono::steady_clock::now();
  int failed = 0;
  const auto results = oracle::run_oracles(filter, core_only);
  for (const auto& r : results) {
    std::printf("%-32s %s  err=%-12.4g tol=%-8.3g %s\n", r.name.c_str(), r.passed ? "PASS" : "FAIL", r.error, r.tol,
                r.detail.c_str());
    if (!r.passed) ++failed;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("%zu oracles, %d failed, %.1f s\n", results.size(), failed, secs);
  return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kinodrive: guided policy search, CEM and SAC on a driving simulator"};
  app.require_subcommand(1);

  std::string run_cfg;
  auto* run = app.add_subcommand("run", "train every seed of an experiment config");
  run->add_option("config", run_cfg, "experiment config (.ini)")->required()->check(CLI::ExistingFile);

  std::string ckpt, eval_cfg;
  int episodes = 20;
  bool dump = false;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint deterministically");
  eval->add_option("checkpoint", ckpt)->required()->check(CLI::ExistingFile);
  eval->add_option("config", eval_cfg)->required()->check(CLI::ExistingFile);
  eval->add_option("--episodes", episodes, "number of evaluation episodes")->check(CLI::NonNegativeNumber);
  eval->add_flag("--dump", dump, "write per-episode trajectory CSVs to output_dir");

  std::vector<std::string> csvs;
  std::string svg;
  bool log_x = false;
  auto* plot = app.add_subcommand("plot", "learning curves of one or more training logs as SVG");
  plot->add_option("csv", csvs)->required()->check(CLI::ExistingFile);
  plot->add_option("-o", svg, "output SVG")->required();
  plot->add_flag("--log-x", log_x, "logarithmic env_steps axis");

  std::string filter;
  bool core = false;
  auto* self = app.add_subcommand("selftest", "run the independent oracle checks");
  self->add_option("--filter", filter, "only oracles whose name contains this");
  self->add_flag("--core", core, "only the core numerical set");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return harness::run_experiment(config::parse_config(run_cfg), std::cout);
    if (*eval) {
      const auto cfg = config::parse_config(eval_cfg);
      const auto s = harness::eval_policy(ckpt, cfg, episodes, dump);
      std::printf("episodes %d  mean_cost %.4f  std_cost %.4f  collision_rate %.4f  off_road_rate %.4f\n",
                  s.episodes, s.mean_cost, s.std_cost, s.collision_rate, s.off_road_rate);
      return 0;
    }
    if (*plot) {
      harness::PlotOptions opt;
      opt.log_x = log_x;
      const int n = harness::plot_compare(csvs, svg, opt, std::cerr);
      std::printf("wrote %s (%d series)\n", svg.c_str(), n);
      return 0;
    }
    if (*self) return cmd_selftest(filter, core);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
