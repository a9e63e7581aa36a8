#include "arpo/arpo.h"

#include <torch/torch.h>

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <new>
#include <string>
#include <vector>

#include "core/errors.hpp"
#include "core/image_io.hpp"
#include "core/report.hpp"
#include "core/rollout.hpp"
#include "core/style_cluster.hpp"
#include "core/trainer.hpp"

struct arpo_env {
  std::unique_ptr<arpo::DistractorWorld> world;
};

struct arpo_run {
  std::unique_ptr<arpo::Trainer> trainer;
};

namespace {

thread_local std::string g_last_error;

arpo_status fail(arpo_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

arpo_status status_of(arpo::ErrorCode code) {
  switch (code) {
    case arpo::ErrorCode::kConfig: return ARPO_ERR_CONFIG;
    case arpo::ErrorCode::kSplitViolation: return ARPO_ERR_SPLIT;
    case arpo::ErrorCode::kUsage: return ARPO_ERR_USAGE;
    case arpo::ErrorCode::kShape: return ARPO_ERR_SHAPE;
    case arpo::ErrorCode::kDomain: return ARPO_ERR_DOMAIN;
    case arpo::ErrorCode::kNumeric: return ARPO_ERR_NUMERIC;
    case arpo::ErrorCode::kIo: return ARPO_ERR_IO;
    case arpo::ErrorCode::kInvalidArgument: return ARPO_ERR_INVALID_ARGUMENT;
  }
  return ARPO_ERR_INTERNAL;
}

template <typename F>
arpo_status guarded(F&& body) {
  try {
    body();
    g_last_error.clear();
    return ARPO_OK;
  } catch (const arpo::Error& e) {
    return fail(status_of(e.code()), e.what());
  } catch (const c10::Error& e) {
    return fail(ARPO_ERR_INTERNAL, e.what_without_backtrace());
  } catch (const std::bad_alloc&) {
    return fail(ARPO_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(ARPO_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(ARPO_ERR_INTERNAL, "unknown error");
  }
}

void require(const void* p, const char* name) {
  if (p == nullptr) throw arpo::InvalidArgument(std::string(name) + " must not be null");
}

arpo::Split to_split(arpo_split s) {
  if (s == ARPO_SPLIT_TRAIN) return arpo::Split::kTrain;
  if (s == ARPO_SPLIT_TEST) return arpo::Split::kTest;
  throw arpo::InvalidArgument("unknown split " + std::to_string(static_cast<int>(s)));
}

arpo::EnvConfig env_config(const char* text) {
  const auto kv = arpo::KvConfig::parse(text ? text : "");
  auto cfg = arpo::EnvConfig::from_kv(kv);
  for (const auto& k : kv.unconsumed_keys()) {
    if (k.rfind("env.", 0) == 0) throw arpo::ConfigError("unknown config key: " + k);
  }
  return cfg;
}

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void copy_observation(const arpo::Image& img, float* out, std::size_t len) {
  if (len < img.pixels.size()) {
    throw arpo::ShapeError("observation buffer holds " + std::to_string(len) + " floats, need " +
                           std::to_string(img.pixels.size()));
  }
  std::memcpy(out, img.pixels.data(), img.pixels.size() * sizeof(float));
}

class UniformPolicy : public arpo::ActingPolicy {
 public:
  int n_actions() const override { return arpo::kNumActions; }
  void act(std::span<const arpo::Observation> obs, std::span<double> probs, std::span<double> values) const override {
    std::fill(probs.begin(), probs.begin() + static_cast<std::ptrdiff_t>(obs.size() * arpo::kNumActions),
              1.0 / arpo::kNumActions);
    std::fill(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(obs.size()), 0.0);
  }
};

std::once_flag g_threads_once;
void init_torch() {
  std::call_once(g_threads_once, [] { torch::set_num_threads(1); });
}

}  // namespace

extern "C" {

const char* arpo_version(void) { return "0.1.0"; }

const char* arpo_status_name(arpo_status status) {
  switch (status) {
    case ARPO_OK: return "ARPO_OK";
    case ARPO_ERR_CONFIG: return "ARPO_ERR_CONFIG";
    case ARPO_ERR_SPLIT: return "ARPO_ERR_SPLIT";
    case ARPO_ERR_USAGE: return "ARPO_ERR_USAGE";
    case ARPO_ERR_SHAPE: return "ARPO_ERR_SHAPE";
    case ARPO_ERR_DOMAIN: return "ARPO_ERR_DOMAIN";
    case ARPO_ERR_NUMERIC: return "ARPO_ERR_NUMERIC";
    case ARPO_ERR_IO: return "ARPO_ERR_IO";
    case ARPO_ERR_INVALID_ARGUMENT: return "ARPO_ERR_INVALID_ARGUMENT";
    case ARPO_ERR_INTERNAL: return "ARPO_ERR_INTERNAL";
  }
  return "ARPO_ERR_UNKNOWN";
}

const char* arpo_last_error_message(void) { return g_last_error.c_str(); }

void arpo_string_free(char* s) { std::free(s); }

arpo_status arpo_env_create(const char* config_text, arpo_split split, arpo_env** out) {
  return guarded([&] {
    require(out, "out");
    *out = nullptr;
    auto env = std::make_unique<arpo_env>();
    env->world = std::make_unique<arpo::DistractorWorld>(env_config(config_text), to_split(split));
    *out = env.release();
  });
}

void arpo_env_destroy(arpo_env* env) { delete env; }

arpo_status arpo_env_observation_shape(const arpo_env* env, int32_t* height, int32_t* width, int32_t* channels) {
  return guarded([&] {
    require(env, "env");
    const int s = env->world->config().image_size;
    if (height) *height = s;
    if (width) *width = s;
    if (channels) *channels = 3;
  });
}

arpo_status arpo_env_reset(arpo_env* env, uint64_t layout_seed, int32_t style_id, int32_t dynamic_phase,
                           float* observation, size_t observation_len) {
  return guarded([&] {
    require(env, "env");
    require(observation, "observation");
    const auto obs = env->world->reset(arpo::LevelSpec{layout_seed, style_id, dynamic_phase});
    copy_observation(obs.image, observation, observation_len);
  });
}

arpo_status arpo_env_step(arpo_env* env, int32_t action, float* observation, size_t observation_len, double* reward,
                          int32_t* done) {
  return guarded([&] {
    require(env, "env");
    require(observation, "observation");
    const std::size_t need = env->world->config().image_size * env->world->config().image_size * 3;
    if (observation_len < need) throw arpo::ShapeError("observation buffer too small");
    const auto r = env->world->step(action);
    copy_observation(r.observation.image, observation, observation_len);
    if (reward) *reward = r.reward;
    if (done) *done = r.done ? 1 : 0;
  });
}

arpo_status arpo_env_export_levels(const char* config_text, arpo_split split, size_t count, uint64_t seed,
                                   char** json_out) {
  return guarded([&] {
    require(json_out, "json_out");
    const arpo::LevelSampler sampler(env_config(config_text), to_split(split));
    *json_out = copy_string(sampler.export_json(count, seed));
  });
}

arpo_status arpo_run_create(const char* config_text, const char* run_dir, arpo_run** out) {
  return guarded([&] {
    require(out, "out");
    *out = nullptr;
    init_torch();
    auto run = std::make_unique<arpo_run>();
    run->trainer = std::make_unique<arpo::Trainer>(arpo::TrainConfig::parse(config_text ? config_text : ""),
                                                   run_dir ? run_dir : "");
    *out = run.release();
  });
}

arpo_status arpo_run_open(const char* run_dir, int32_t read_only, arpo_run** out) {
  return guarded([&] {
    require(run_dir, "run_dir");
    require(out, "out");
    *out = nullptr;
    init_torch();
    auto run = std::make_unique<arpo_run>();
    run->trainer = read_only ? arpo::Trainer::open_readonly(run_dir) : arpo::Trainer::open(run_dir);
    *out = run.release();
  });
}

void arpo_run_destroy(arpo_run* run) { delete run; }

arpo_status arpo_run_train(arpo_run* run, int64_t max_iterations) {
  return guarded([&] {
    require(run, "run");
    run->trainer->train(max_iterations);
  });
}

arpo_status arpo_run_evaluate(arpo_run* run, arpo_split split, int32_t n_episodes, int32_t greedy, uint64_t seed,
                              double* mean, double* std) {
  return guarded([&] {
    require(run, "run");
    if (n_episodes < 1) throw arpo::DomainError("n_episodes must be >= 1");
    const auto r = run->trainer->evaluate(to_split(split), n_episodes, greedy != 0, seed);
    if (mean) *mean = r.mean;
    if (std) *std = r.std;
  });
}

arpo_status arpo_run_iteration(const arpo_run* run, int64_t* iteration) {
  return guarded([&] {
    require(run, "run");
    require(iteration, "iteration");
    *iteration = run->trainer->iteration();
  });
}

arpo_status arpo_run_timesteps(const arpo_run* run, int64_t* timesteps) {
  return guarded([&] {
    require(run, "run");
    require(timesteps, "timesteps");
    *timesteps = run->trainer->timesteps();
  });
}

arpo_status arpo_run_finished(const arpo_run* run, int32_t* finished) {
  return guarded([&] {
    require(run, "run");
    require(finished, "finished");
    *finished = run->trainer->finished() ? 1 : 0;
  });
}

arpo_status arpo_config_normalize(const char* config_text, char** out) {
  return guarded([&] {
    require(out, "out");
    *out = copy_string(arpo::TrainConfig::parse(config_text ? config_text : "").to_kv().to_string());
  });
}

arpo_status arpo_cluster_fit(const char* config_text, int32_t n_clusters, int32_t n_observations, uint64_t seed,
                             const char* model_path, const char* montage_png, int32_t* final_clusters,
                             double* purity) {
  return guarded([&] {
    require(model_path, "model_path");
    if (n_clusters < 1) throw arpo::DomainError("n_clusters must be >= 1");
    if (n_observations < n_clusters) throw arpo::DomainError("n_observations must be >= n_clusters");
    init_torch();
    const auto cfg = arpo::TrainConfig::parse(config_text ? config_text : "");
    arpo::VecEnv envs(cfg.env, arpo::Split::kTrain, 16, arpo::hash_combine(seed, arpo::fnv1a("env")));
    arpo::Rng action_rng = arpo::named_stream(seed, "action");
    const UniformPolicy uniform;
    const int steps = (n_observations + 15) / 16;
    auto batch = arpo::collect(uniform, envs, steps, action_rng);
    batch.observations.resize(static_cast<std::size_t>(n_observations));
    batch.style_ids.resize(static_cast<std::size_t>(n_observations));
    const auto fit = arpo::fit_cluster_model(batch.observations, cfg.features, n_clusters,
                                             arpo::hash_combine(seed, arpo::fnv1a("cluster")));
    arpo::save_cluster_model(fit.model, model_path);
    const auto labels = arpo::assign_clusters(fit.model, batch.observations);
    std::map<int, std::map<int, int>> counts;
    for (std::size_t i = 0; i < labels.size(); ++i) ++counts[labels[i]][batch.style_ids[i]];
    int matched = 0;
    for (const auto& [cluster, styles] : counts) {
      int best = 0;
      for (const auto& [style, c] : styles) best = std::max(best, c);
      matched += best;
    }
    if (montage_png) arpo::write_png(arpo::cluster_montage(fit.model, cfg.env, 6, seed), montage_png);
    if (final_clusters) *final_clusters = fit.model.n_clusters();
    if (purity) *purity = static_cast<double>(matched) / static_cast<double>(labels.size());
  });
}

arpo_status arpo_translate_grid(const char* run_dir, const char* png_path, int32_t per_domain) {
  return guarded([&] {
    require(run_dir, "run_dir");
    require(png_path, "png_path");
    if (per_domain < 1) throw arpo::DomainError("per_domain must be >= 1");
    init_torch();
    const auto trainer = arpo::Trainer::open_readonly(run_dir);
    trainer->write_translation_grid(png_path, per_domain);
  });
}

arpo_status arpo_report(const char* const* run_dirs, size_t n_runs, const char* out_dir) {
  return guarded([&] {
    require(out_dir, "out_dir");
    if (n_runs > 0) require(run_dirs, "run_dirs");
    init_torch();
    std::vector<std::string> dirs;
    for (size_t i = 0; i < n_runs; ++i) {
      require(run_dirs[i], "run_dirs[i]");
      dirs.emplace_back(run_dirs[i]);
    }
    arpo::write_report(dirs, out_dir);
  });
}

arpo_status arpo_ablation_report(const char* param, const char* const* values, size_t n_values,
                                 const char* const* run_dirs, size_t runs_per_value, const char* out_dir) {
  return guarded([&] {
    require(param, "param");
    require(values, "values");
    require(run_dirs, "run_dirs");
    require(out_dir, "out_dir");
    std::vector<std::pair<std::string, std::vector<std::string>>> groups;
    for (size_t v = 0; v < n_values; ++v) {
      require(values[v], "values[i]");
      std::vector<std::string> dirs;
      for (size_t r = 0; r < runs_per_value; ++r) {
        const char* d = run_dirs[v * runs_per_value + r];
        require(d, "run_dirs[i]");
        dirs.emplace_back(d);
      }
      groups.emplace_back(values[v], std::move(dirs));
    }
    arpo::write_ablation_report(param, groups, out_dir);
  });
}

}  // extern "C"
