#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "arpo/arpo.h"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct CliFailure {
  arpo_status status;
  std::string message;
};

void check(arpo_status s) {
  if (s != ARPO_OK) throw CliFailure{s, arpo_last_error_message()};
}

int report_failure(arpo_status status, const std::string& message) {
  json record = {{"error", {{"status", arpo_status_name(status)}, {"code", static_cast<int>(status)},
                            {"message", message}}}};
  std::cerr << record.dump() << "\n";
  return static_cast<int>(status);
}

std::string read_config(const std::string& path) {
  if (path.empty()) return {};
  std::ifstream f(path);
  if (!f) throw CliFailure{ARPO_ERR_IO, "cannot open config file: " + path};
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str() + "\n";
}

// Appends `key = value` overrides; later lines win over the base file.
std::string with_overrides(std::string text, const std::vector<std::string>& sets) {
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw CliFailure{ARPO_ERR_USAGE, "--set expects key=value, got '" + s + "'"};
    text += s.substr(0, eq) + " = " + s.substr(eq + 1) + "\n";
  }
  return text;
}

struct RunGuard {
  arpo_run* run = nullptr;
  ~RunGuard() { arpo_run_destroy(run); }
};

json run_status(arpo_run* run, const std::string& dir) {
  int64_t it = 0, ts = 0;
  int32_t fin = 0;
  check(arpo_run_iteration(run, &it));
  check(arpo_run_timesteps(run, &ts));
  check(arpo_run_finished(run, &fin));
  return {{"run_dir", dir}, {"iteration", it}, {"timesteps", ts}, {"finished", fin != 0}};
}

// Trains a fresh run in `dir`, or resumes it when it already holds one.
json train_run(const std::string& config_text, const std::string& dir, int64_t max_iterations) {
  RunGuard g;
  if (fs::exists(fs::path(dir) / "metrics.csv")) {
    check(arpo_run_open(dir.c_str(), 0, &g.run));
  } else {
    check(arpo_run_create(config_text.c_str(), dir.c_str(), &g.run));
  }
  check(arpo_run_train(g.run, max_iterations));
  return run_status(g.run, dir);
}

arpo_split parse_split(const std::string& s) {
  if (s == "train") return ARPO_SPLIT_TRAIN;
  if (s == "test") return ARPO_SPLIT_TEST;
  throw CliFailure{ARPO_ERR_USAGE, "split must be train or test"};
}

std::vector<std::string> ablation_keys(const std::string& param) {
  if (param == "n_clusters") return {"train.n_clusters"};
  if (param == "beta") return {"train.beta1", "train.beta2"};
  if (param == "beta1") return {"train.beta1"};
  if (param == "beta2") return {"train.beta2"};
  if (param.find('.') != std::string::npos) return {param};
  throw CliFailure{ARPO_ERR_USAGE, "unknown ablation parameter '" + param + "'"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial style-robust policy training on the distractor world"};
  app.require_subcommand(1);

  std::string config_path, algo = "arpo", out_dir, run_dir, split = "test", param, model_out, montage;
  std::vector<std::string> sets, runs, values;
  std::vector<uint64_t> seeds;
  uint64_t seed = 0;
  int64_t iterations = -1;
  int episodes = 100, clusters = 3, observations = 4096, per_domain = 2;
  bool greedy = false;

  auto* train = app.add_subcommand("train", "train one run");
  train->add_option("--config", config_path, "config file (key = value lines)");
  train->add_option("--algo", algo, "arpo, ppo or ppo_cutout")->check(CLI::IsMember({"arpo", "ppo", "ppo_cutout"}));
  train->add_option("--seed", seed, "root seed");
  train->add_option("--out", out_dir, "run directory (default runs/<algo>_seed<seed>)");
  train->add_option("--set", sets, "config override key=value (repeatable)");
  train->add_option("--iterations", iterations, "stop after this many iterations (resume later)");

  auto* eval = app.add_subcommand("eval", "evaluate the latest checkpoint of a run");
  eval->add_option("--run", run_dir, "run directory")->required();
  eval->add_option("--split", split, "train or test")->check(CLI::IsMember({"train", "test"}));
  eval->add_option("--episodes", episodes, "episodes")->check(CLI::PositiveNumber);
  eval->add_option("--seed", seed, "evaluation seed");
  eval->add_flag("--greedy", greedy, "act greedily instead of sampling");

  auto* cluster = app.add_subcommand("cluster", "fit a style clustering model on train-split frames");
  cluster->add_option("--config", config_path, "config file");
  cluster->add_option("--set", sets, "config override key=value (repeatable)");
  cluster->add_option("--clusters", clusters, "number of clusters")->check(CLI::PositiveNumber);
  cluster->add_option("--observations", observations, "frames to fit on")->check(CLI::PositiveNumber);
  cluster->add_option("--seed", seed, "seed");
  cluster->add_option("--out", model_out, "model JSON path")->required();
  cluster->add_option("--montage", montage, "cluster montage PNG path");

  auto* grid = app.add_subcommand("translate-grid", "render a translation grid for an ARPO run");
  grid->add_option("--run", run_dir, "run directory")->required();
  grid->add_option("--out", out_dir, "PNG path")->required();
  grid->add_option("--per-domain", per_domain, "source images per domain")->check(CLI::PositiveNumber);

  auto* report = app.add_subcommand("report", "aggregate finished runs into tables and plots");
  report->add_option("--runs", runs, "run directories")->required()->delimiter(',');
  report->add_option("--out", out_dir, "output directory")->required();

  auto* ablate = app.add_subcommand("ablate", "train one run per value and seed, then tabulate");
  ablate->add_option("--config", config_path, "base config file");
  ablate->add_option("--algo", algo, "algorithm")->check(CLI::IsMember({"arpo", "ppo", "ppo_cutout"}));
  ablate->add_option("--param", param, "n_clusters, beta, beta1, beta2 or a full config key")->required();
  ablate->add_option("--values", values, "values to sweep")->required()->delimiter(',');
  ablate->add_option("--seeds", seeds, "seeds per value (at least 3)")->delimiter(',');
  ablate->add_option("--set", sets, "config override key=value (repeatable)");
  ablate->add_option("--out", out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help();
    return report_failure(ARPO_ERR_USAGE, e.what());
  }

  try {
    if (train->parsed()) {
      const std::string text = with_overrides(read_config(config_path) + "train.algo = " + algo +
                                                  "\ntrain.seed = " + std::to_string(seed) + "\n",
                                              sets);
      if (out_dir.empty()) out_dir = (fs::path("runs") / (algo + "_seed" + std::to_string(seed))).string();
      std::cout << train_run(text, out_dir, iterations).dump() << "\n";
    } else if (eval->parsed()) {
      RunGuard g;
      check(arpo_run_open(run_dir.c_str(), 1, &g.run));
      double mean = 0.0, sd = 0.0;
      check(arpo_run_evaluate(g.run, parse_split(split), episodes, greedy ? 1 : 0, seed, &mean, &sd));
      std::cout << json({{"run_dir", run_dir}, {"split", split}, {"episodes", episodes}, {"greedy", greedy},
                         {"seed", seed}, {"mean", mean}, {"std", sd}})
                       .dump()
                << "\n";
    } else if (cluster->parsed()) {
      const std::string text = with_overrides(read_config(config_path), sets);
      int32_t final_k = 0;
      double purity = 0.0;
      check(arpo_cluster_fit(text.c_str(), clusters, observations, seed, model_out.c_str(),
                             montage.empty() ? nullptr : montage.c_str(), &final_k, &purity));
      std::cout << json({{"model", model_out}, {"requested_clusters", clusters}, {"final_clusters", final_k},
                         {"style_purity", purity}})
                       .dump()
                << "\n";
    } else if (grid->parsed()) {
      check(arpo_translate_grid(run_dir.c_str(), out_dir.c_str(), per_domain));
      std::cout << json({{"png", out_dir}}).dump() << "\n";
    } else if (report->parsed()) {
      std::vector<const char*> ptrs;
      for (const auto& r : runs) ptrs.push_back(r.c_str());
      check(arpo_report(ptrs.data(), ptrs.size(), out_dir.c_str()));
      std::cout << json({{"out", out_dir}, {"runs", runs}}).dump() << "\n";
    } else if (ablate->parsed()) {
      if (seeds.empty()) seeds = {1, 2, 3};
      const auto keys = ablation_keys(param);
      const std::string base = read_config(config_path);
      std::vector<std::string> dirs;
      for (const auto& v : values) {
        for (const auto s : seeds) {
          std::string text = base + "train.algo = " + algo + "\ntrain.seed = " + std::to_string(s) + "\n";
          text = with_overrides(text, sets);
          for (const auto& k : keys) text += k + " = " + v + "\n";
          const auto dir = (fs::path(out_dir) / (param + "_" + v) / ("seed_" + std::to_string(s))).string();
          fs::create_directories(fs::path(dir).parent_path());
          std::cerr << train_run(text, dir, -1).dump() << "\n";
          dirs.push_back(dir);
        }
      }
      std::vector<const char*> vptrs, dptrs;
      for (const auto& v : values) vptrs.push_back(v.c_str());
      for (const auto& d : dirs) dptrs.push_back(d.c_str());
      check(arpo_ablation_report(param.c_str(), vptrs.data(), vptrs.size(), dptrs.data(), seeds.size(),
                                 out_dir.c_str()));
      std::cout << json({{"out", out_dir}, {"param", param}, {"values", values}}).dump() << "\n";
    }
  } catch (const CliFailure& f) {
    return report_failure(f.status, f.message);
  } catch (const std::exception& e) {
    return report_failure(ARPO_ERR_INTERNAL, e.what());
  }
  return 0;
}
