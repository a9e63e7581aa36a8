#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "core/image_io.hpp"
#include "core/style_cluster.hpp"
#include "core/trainer.hpp"

namespace arpo {

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population (ddof 0)
  int n = 0;
};
MeanStd mean_std(const std::vector<double>& values);

// s_0 = x_0, s_t = alpha * s_{t-1} + (1 - alpha) * x_t. Non-finite inputs
// stay non-finite in the output and do not update the running value.
std::vector<double> ema(const std::vector<double>& values, double alpha = 0.9);

// Per-run record read back from a run directory.
struct RunSummary {
  std::string dir;
  std::string algo;
  std::uint64_t seed = 0;
  double train = 0.0;  // final evaluation means
  double test = 0.0;
  double gap = 0.0;
  std::vector<IterationMetrics> metrics;
};
RunSummary load_run_summary(const std::string& run_dir);

struct GroupStats {
  std::string label;
  MeanStd train, test, gap;
};

// Groups runs by algorithm. Throws UsageError unless every group has at
// least 3 runs.
std::vector<GroupStats> summarize_by_algo(const std::vector<RunSummary>& runs);

// summary.csv, summary.json, per_run.csv, curves.csv, legend.json,
// learning_curves.png, test_curves.png, adv_kl.png and, for the first run
// with a translator, cluster_montage.png and translation_grid.png.
void write_report(const std::vector<std::string>& run_dirs, const std::string& out_dir);

// One group of run directories per ablation value; ablation.csv,
// ablation.json and ablation_test.png (bars drawn as lines, one per value).
void write_ablation_report(const std::string& param,
                           const std::vector<std::pair<std::string, std::vector<std::string>>>& groups,
                           const std::string& out_dir);

// Rows of rendered train-level observations grouped by assigned cluster.
Canvas cluster_montage(const ClusterModel& model, const EnvConfig& env, int per_cluster, std::uint64_t seed);

}  // namespace arpo
