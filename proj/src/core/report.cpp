#include "core/report.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>

#include "core/errors.hpp"

namespace arpo {
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kMinSeeds = 3;

std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  f << text;
}

std::string num(double v) { return format_double(v); }

json stats_json(const MeanStd& s) { return {{"mean", s.mean}, {"std", s.std}, {"n", s.n}}; }

// Column of a metric across runs, truncated to the shortest run.
using Getter = double (*)(const IterationMetrics&);

struct Curve {
  std::vector<double> x;     // timesteps of the first run
  std::vector<double> mean;  // across runs, of the EMA-smoothed per-run series
  std::vector<double> std;
};

Curve mean_curve(const std::vector<const RunSummary*>& runs, Getter get, bool smooth) {
  Curve c;
  std::size_t len = runs.front()->metrics.size();
  for (const auto* r : runs) len = std::min(len, r->metrics.size());
  std::vector<std::vector<double>> series;
  for (const auto* r : runs) {
    std::vector<double> s;
    for (std::size_t i = 0; i < len; ++i) s.push_back(get(r->metrics[i]));
    series.push_back(smooth ? ema(s) : s);
  }
  for (std::size_t i = 0; i < len; ++i) {
    c.x.push_back(static_cast<double>(runs.front()->metrics[i].timesteps));
    std::vector<double> col;
    for (const auto& s : series) {
      if (std::isfinite(s[i])) col.push_back(s[i]);
    }
    if (col.size() == series.size()) {
      const auto ms = mean_std(col);
      c.mean.push_back(ms.mean);
      c.std.push_back(ms.std);
    } else {
      c.mean.push_back(std::nan(""));
      c.std.push_back(std::nan(""));
    }
  }
  return c;
}

Canvas run_cluster_and_grid(const RunSummary& run, const std::string& out_dir) {
  auto trainer = Trainer::open_readonly(run.dir);
  const auto* model = trainer->cluster_model();
  if (model == nullptr) throw UsageError("run has no cluster model: " + run.dir);
  auto canvas = cluster_montage(*model, trainer->config().env, 6, trainer->config().seed);
  write_png(canvas, (fs::path(out_dir) / "cluster_montage.png").string());
  if (trainer->translator()) {
    trainer->write_translation_grid((fs::path(out_dir) / "translation_grid.png").string());
  }
  return canvas;
}

}  // namespace

MeanStd mean_std(const std::vector<double>& values) {
  MeanStd s;
  s.n = static_cast<int>(values.size());
  if (values.empty()) {
    s.mean = s.std = std::nan("");
    return s;
  }
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(var / static_cast<double>(values.size()));
  return s;
}

std::vector<double> ema(const std::vector<double>& values, double alpha) {
  if (!(alpha >= 0.0 && alpha < 1.0)) throw InvalidArgument("smoothing constant must lie in [0, 1)");
  std::vector<double> out(values.size(), std::nan(""));
  bool started = false;
  double s = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) continue;
    s = started ? alpha * s + (1.0 - alpha) * values[i] : values[i];
    started = true;
    out[i] = s;
  }
  return out;
}

RunSummary load_run_summary(const std::string& run_dir) {
  RunSummary r;
  r.dir = run_dir;
  const fs::path dir(run_dir);
  const auto cfg = TrainConfig::parse(read_text((dir / "config.txt").string()));
  r.algo = algo_name(cfg.algo);
  r.seed = cfg.seed;
  r.metrics = read_metrics((dir / "metrics.csv").string());
  const auto path = dir / "final_eval.json";
  if (!fs::exists(path)) throw UsageError("run has not finished (no final_eval.json): " + run_dir);
  try {
    const auto j = json::parse(read_text(path.string()));
    r.train = j.at("train").at("mean").get<double>();
    r.test = j.at("test").at("mean").get<double>();
    r.gap = j.at("gap").get<double>();
  } catch (const json::exception& e) {
    throw IoError("malformed final_eval.json in " + run_dir + ": " + e.what());
  }
  return r;
}

std::vector<GroupStats> summarize_by_algo(const std::vector<RunSummary>& runs) {
  std::map<std::string, std::vector<const RunSummary*>> groups;
  for (const auto& r : runs) groups[r.algo].push_back(&r);
  std::vector<GroupStats> out;
  for (const auto& [label, members] : groups) {
    if (static_cast<int>(members.size()) < kMinSeeds) {
      throw UsageError("group '" + label + "' has " + std::to_string(members.size()) +
                       " runs; mean and std need at least 3 seeds");
    }
    std::vector<double> tr, te, gap;
    for (const auto* m : members) {
      tr.push_back(m->train);
      te.push_back(m->test);
      gap.push_back(m->gap);
    }
    out.push_back({label, mean_std(tr), mean_std(te), mean_std(gap)});
  }
  return out;
}

void write_report(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
  if (static_cast<int>(run_dirs.size()) < kMinSeeds) {
    throw UsageError("report needs at least 3 run directories, got " + std::to_string(run_dirs.size()));
  }
  std::vector<RunSummary> runs;
  for (const auto& d : run_dirs) runs.push_back(load_run_summary(d));
  const auto stats = summarize_by_algo(runs);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());
  const fs::path out(out_dir);

  std::string csv = "algo,n_runs,train_mean,train_std,test_mean,test_std,gap_mean,gap_std\n";
  json summary = json::array();
  for (const auto& g : stats) {
    csv += g.label + "," + std::to_string(g.test.n) + "," + num(g.train.mean) + "," + num(g.train.std) + "," +
           num(g.test.mean) + "," + num(g.test.std) + "," + num(g.gap.mean) + "," + num(g.gap.std) + "\n";
    summary.push_back({{"algo", g.label}, {"train", stats_json(g.train)}, {"test", stats_json(g.test)},
                       {"gap", stats_json(g.gap)}});
  }
  write_text((out / "summary.csv").string(), csv);
  write_text((out / "summary.json").string(), json({{"groups", summary}, {"smoothing", 0.9}}).dump(2) + "\n");

  std::string per_run = "run_dir,algo,seed,train,test,gap\n";
  for (const auto& r : runs) {
    per_run += r.dir + "," + r.algo + "," + std::to_string(r.seed) + "," + num(r.train) + "," + num(r.test) + "," +
               num(r.gap) + "\n";
  }
  write_text((out / "per_run.csv").string(), per_run);

  std::map<std::string, std::vector<const RunSummary*>> groups;
  for (const auto& r : runs) groups[r.algo].push_back(&r);
  std::string curves = "algo,iteration,timesteps,train_return_mean,train_return_std,test_return_mean,"
                       "test_return_std,adv_kl_mean,adv_kl_std\n";
  std::vector<PlotSeries> train_plot, test_plot, kl_plot;
  json legend = {{"learning_curves.png", json::object()},
                 {"test_curves.png", json::object()},
                 {"adv_kl.png", json::object()}};
  std::size_t gi = 0;
  for (const auto& [label, members] : groups) {
    const auto tr = mean_curve(members, [](const IterationMetrics& m) { return m.train_return; }, true);
    const auto te = mean_curve(members, [](const IterationMetrics& m) { return m.test_return; }, false);
    const auto kl = mean_curve(members, [](const IterationMetrics& m) { return m.adv_kl; }, false);
    for (std::size_t i = 0; i < tr.x.size(); ++i) {
      curves += label + "," + std::to_string(i + 1) + "," + num(tr.x[i]) + "," + num(tr.mean[i]) + "," +
                num(tr.std[i]) + "," + num(te.mean[i]) + "," + num(te.std[i]) + "," + num(kl.mean[i]) + "," +
                num(kl.std[i]) + "\n";
    }
    const auto color = palette(gi);
    const auto hex = [&] {
      char buf[8];
      std::snprintf(buf, sizeof buf, "#%02x%02x%02x", color[0], color[1], color[2]);
      return std::string(buf);
    }();
    train_plot.push_back({tr.x, tr.mean, color});
    legend["learning_curves.png"][hex] = label + " smoothed train return (mean over seeds)";
    // Test returns exist only at evaluation iterations; connect those points.
    PlotSeries test_series{{}, {}, color};
    for (std::size_t i = 0; i < te.x.size(); ++i) {
      if (std::isfinite(te.mean[i])) {
        test_series.x.push_back(te.x[i]);
        test_series.y.push_back(te.mean[i]);
      }
    }
    test_plot.push_back(test_series);
    legend["test_curves.png"][hex] = label + " test return (mean over seeds)";
    for (const auto* r : members) {
      PlotSeries s{{}, {}, color};
      for (const auto& m : r->metrics) {
        s.x.push_back(static_cast<double>(m.iteration));
        s.y.push_back(m.adv_kl);
      }
      bool any = false;
      for (double v : s.y) any = any || std::isfinite(v);
      if (any) kl_plot.push_back(std::move(s));
    }
    if (!kl_plot.empty()) legend["adv_kl.png"][hex] = label + " adv_kl per iteration, one line per seed";
    ++gi;
  }
  write_text((out / "curves.csv").string(), curves);
  write_text((out / "legend.json").string(), legend.dump(2) + "\n");
  write_png(line_plot(train_plot), (out / "learning_curves.png").string());
  write_png(line_plot(test_plot), (out / "test_curves.png").string());
  write_png(line_plot(kl_plot), (out / "adv_kl.png").string());

  for (const auto& r : runs) {
    if (r.algo != "arpo") continue;
    try {
      run_cluster_and_grid(r, out_dir);
      break;
    } catch (const UsageError&) {
      continue;  // run without a cluster model or translator
    }
  }
}

void write_ablation_report(const std::string& param,
                           const std::vector<std::pair<std::string, std::vector<std::string>>>& groups,
                           const std::string& out_dir) {
  if (groups.empty()) throw UsageError("ablation needs at least one value");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());
  std::string csv = param + ",n_runs,train_mean,train_std,test_mean,test_std,gap_mean,gap_std\n";
  json rows = json::array();
  PlotSeries mean_line{{}, {}, palette(0)}, lo{{}, {}, palette(1)}, hi{{}, {}, palette(1)};
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto& [value, dirs] = groups[i];
    if (static_cast<int>(dirs.size()) < kMinSeeds) {
      throw UsageError("ablation value " + value + " has " + std::to_string(dirs.size()) +
                       " runs; mean and std need at least 3 seeds");
    }
    std::vector<double> tr, te, gap;
    for (const auto& d : dirs) {
      const auto r = load_run_summary(d);
      tr.push_back(r.train);
      te.push_back(r.test);
      gap.push_back(r.gap);
    }
    const auto a = mean_std(tr), b = mean_std(te), c = mean_std(gap);
    csv += value + "," + std::to_string(b.n) + "," + num(a.mean) + "," + num(a.std) + "," + num(b.mean) + "," +
           num(b.std) + "," + num(c.mean) + "," + num(c.std) + "\n";
    rows.push_back({{"value", value}, {"runs", dirs}, {"train", stats_json(a)}, {"test", stats_json(b)},
                    {"gap", stats_json(c)}});
    const double x = static_cast<double>(i);
    mean_line.x.push_back(x);
    mean_line.y.push_back(b.mean);
    lo.x.push_back(x);
    lo.y.push_back(b.mean - b.std);
    hi.x.push_back(x);
    hi.y.push_back(b.mean + b.std);
  }
  const fs::path out(out_dir);
  write_text((out / "ablation.csv").string(), csv);
  write_text((out / "ablation.json").string(), json({{"param", param}, {"values", rows}}).dump(2) + "\n");
  write_png(line_plot({lo, hi, mean_line}), (out / "ablation_test.png").string());
}

Canvas cluster_montage(const ClusterModel& model, const EnvConfig& env, int per_cluster, std::uint64_t seed) {
  if (per_cluster < 1) throw InvalidArgument("per_cluster must be >= 1");
  const int k = model.n_clusters();
  const LevelSampler sampler(env, Split::kTrain);
  Rng rng = named_stream(seed, "cluster-montage");
  std::vector<std::vector<Image>> rows(static_cast<std::size_t>(k));
  for (int tries = 0; tries < 50 * k * per_cluster; ++tries) {
    DistractorWorld world(env, Split::kTrain);
    auto img = world.reset(sampler.sample(rng)).image;
    auto& row = rows[static_cast<std::size_t>(assign_cluster(model, img))];
    if (static_cast<int>(row.size()) < per_cluster) row.push_back(std::move(img));
    bool full = true;
    for (const auto& r : rows) full = full && static_cast<int>(r.size()) >= per_cluster;
    if (full) break;
  }
  std::vector<std::vector<Image>> nonempty;
  for (auto& r : rows) {
    if (!r.empty()) nonempty.push_back(std::move(r));
  }
  return montage(nonempty, 3, 2);
}

}  // namespace arpo
