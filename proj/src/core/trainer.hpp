#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "core/config.hpp"
#include "core/distractor_world.hpp"
#include "core/policy.hpp"
#include "core/rollout.hpp"
#include "core/style_cluster.hpp"
#include "core/translator.hpp"

namespace arpo {

enum class Algo { kArpo, kPpo, kPpoCutout };
const char* algo_name(Algo a);
Algo parse_algo(const std::string& s);

// Training hyperparameters. Serialized through the `train.*`, `policy.*`,
// `gan.*` and `cluster.*` keys of a KvConfig, next to the `env.*` keys.
struct TrainConfig {
  Algo algo = Algo::kArpo;
  std::uint64_t seed = 0;
  std::int64_t total_timesteps = 65536;
  int n_envs = 16;
  int rollout_length = 128;
  double gamma = 0.999;
  double lam = 0.95;
  double beta1 = 20.0;
  double beta2 = 20.0;
  // false: ARPO never feeds translations to the policy (KL term bypassed).
  bool translate = true;
  int n_clusters = 3;
  int warmup_observations = 4096;
  int gan_batch = 64;
  int eval_every = 0;  // iterations between evaluations; 0: final only
  int eval_episodes = 32;
  int final_eval_episodes = 200;
  bool eval_greedy = false;
  int checkpoint_every = 0;  // 0: final checkpoint only
  bool mask_distractors = false;  // policy sees state pixels only

  PolicyConfig policy;
  ConvActorCriticOptions net;
  TranslatorConfig gan;
  FeatureExtractorConfig features;
  EnvConfig env;

  std::int64_t steps_per_iteration() const { return static_cast<std::int64_t>(n_envs) * rollout_length; }
  // Rollouts needed to consume total_timesteps (rounded up).
  std::int64_t total_iterations() const;

  void validate() const;
  // Unknown keys raise ConfigError.
  static TrainConfig from_kv(const KvConfig& kv);
  static TrainConfig parse(const std::string& text);
  KvConfig to_kv() const;
};

struct EvalResult {
  double mean = 0.0;
  double std = 0.0;  // population
  std::vector<double> returns;
  std::vector<LevelSpec> levels;
};

// Plays `n_episodes` complete episodes on levels drawn from the split with a
// generator seeded by `seed`. Greedy picks the most probable action (lowest
// index on ties); otherwise actions are sampled.
EvalResult evaluate(const ActingPolicy& policy, const EnvConfig& env, Split split, int n_episodes, bool greedy,
                    std::uint64_t seed);

struct IterationMetrics {
  std::int64_t iteration = 0;  // 1-based count of completed iterations
  std::int64_t timesteps = 0;
  double train_return = 0.0;       // mean of episodes finished in this rollout
  double eval_train_return = 0.0;  // nan when not evaluated this iteration
  double test_return = 0.0;        // nan when not evaluated this iteration
  double adv_kl = 0.0;             // nan while no translator exists
  double surrogate = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double loss_d = 0.0;
  double loss_g = 0.0;
  double gan_adv = 0.0;
  double gan_cls_real = 0.0;
  double gan_cls_fake = 0.0;
  double gan_rec = 0.0;
  double gan_gp = 0.0;
  double gan_policy_kl = 0.0;
  int n_domains = 0;
};

std::string metrics_header();
std::string metrics_row(const IterationMetrics& m);
IterationMetrics parse_metrics_row(const std::string& line);
std::vector<IterationMetrics> read_metrics(const std::string& path);

// Algorithm state plus an optional run directory. With an empty run_dir
// nothing is written to disk.
class Trainer {
 public:
  Trainer(TrainConfig config, std::string run_dir);
  // Resumes the run in `run_dir` from its latest checkpoint; rows of
  // metrics.csv past the checkpoint are dropped.
  static std::unique_ptr<Trainer> open(const std::string& run_dir);
  // Loads the latest checkpoint without touching any file in the run.
  static std::unique_ptr<Trainer> open_readonly(const std::string& run_dir);
  ~Trainer();

  // Runs iterations until the budget is spent or `max_iterations` more have
  // completed (negative: no limit). Writes final_eval.json and a final
  // checkpoint when the budget is reached.
  void train(std::int64_t max_iterations = -1);
  IterationMetrics run_iteration();
  bool finished() const { return iteration_ >= config_.total_iterations(); }

  EvalResult evaluate(Split split, int n_episodes, bool greedy, std::uint64_t seed) const;

  const TrainConfig& config() const { return config_; }
  const std::string& run_dir() const { return run_dir_; }
  std::int64_t iteration() const { return iteration_; }
  std::int64_t timesteps() const { return timesteps_; }
  const std::vector<IterationMetrics>& history() const { return history_; }
  PolicyModel& policy() { return *policy_; }
  TranslatorPair* translator() { return translator_.get(); }
  const ClusterModel* cluster_model() const { return cluster_ ? &*cluster_ : nullptr; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  void save_checkpoint(const std::string& path) const;
  void load_checkpoint(const std::string& path);
  // Source images of each domain in rows, translated to every domain in columns.
  void write_translation_grid(const std::string& path, int per_domain = 2) const;

 private:
  void warn(const std::string& message);
  void maybe_fit_clusters(const RolloutBatch& batch);
  void create_translator();
  void append_metrics(const IterationMetrics& m);
  void write_final_eval();

  TrainConfig config_;
  std::string run_dir_;
  std::unique_ptr<PolicyModel> policy_;
  std::unique_ptr<TranslatorPair> translator_;
  std::optional<ClusterModel> cluster_;
  std::vector<Image> warmup_;
  std::unique_ptr<VecEnv> envs_;
  Rng action_rng_, shuffle_rng_, gan_rng_, augment_rng_;
  std::int64_t iteration_ = 0;
  std::int64_t timesteps_ = 0;
  std::vector<IterationMetrics> history_;
  std::vector<std::string> warnings_;
};

// Checkpoint file of the run directory.
std::string checkpoint_path(const std::string& run_dir);

}  // namespace arpo
