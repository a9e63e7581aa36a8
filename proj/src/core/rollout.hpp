#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "core/distractor_world.hpp"
#include "core/rng.hpp"

namespace arpo {

// Anything that maps observations to action distributions and value
// estimates. Network policies read only `Observation::image`; hand-coded
// oracles in tests may read the latent state.
class ActingPolicy {
 public:
  virtual ~ActingPolicy() = default;
  virtual int n_actions() const = 0;
  // probs: observations.size() x n_actions, row-major; values: observations.size().
  virtual void act(std::span<const Observation> observations, std::span<double> probs,
                   std::span<double> values) const = 0;
};

// Time-major transitions from `n_envs` parallel environments: index t * n_envs + e.
struct RolloutBatch {
  int n_envs = 0;
  int n_steps = 0;
  int n_actions = kNumActions;
  std::vector<Image> observations;
  std::vector<std::int64_t> actions;
  std::vector<double> rewards;
  std::vector<double> values;
  std::vector<double> action_dists;  // size() * n_actions
  std::vector<std::uint8_t> dones;
  std::vector<int> style_ids;
  std::vector<double> advantages;
  std::vector<double> returns;
  std::vector<double> last_values;  // bootstrap V(s_T) per env
  // Undiscounted returns of episodes that finished during collection.
  std::vector<double> episode_returns;

  std::size_t size() const { return actions.size(); }
  // Checks the field-length and simplex invariants; throws ShapeError.
  void validate() const;
};

// A fixed set of environments stepped together, auto-resetting finished
// episodes with levels drawn from the split's level distribution.
class VecEnv {
 public:
  VecEnv(const EnvConfig& config, Split split, int n_envs, std::uint64_t seed);

  int size() const { return static_cast<int>(envs_.size()); }
  const std::vector<Observation>& observations() const { return current_; }
  // Steps env `i`; on episode end the next level is sampled and the stored
  // observation becomes the new episode's first frame. The finished
  // episode's undiscounted return is written to `finished_return`.
  StepResult step(int i, int action, double* finished_return = nullptr);
  const DistractorWorld& env(int i) const { return envs_[static_cast<std::size_t>(i)]; }
  double running_return(int i) const { return running_[static_cast<std::size_t>(i)]; }

  struct State {
    std::vector<EnvSnapshot> envs;
    std::vector<double> running;
    std::string rng;
  };
  State state() const;
  void restore(const State& s);

 private:
  LevelSampler sampler_;
  Rng rng_;
  std::vector<DistractorWorld> envs_;
  std::vector<Observation> current_;
  std::vector<double> running_;
};

// Rolls `policy` for n_steps in every env; actions are sampled from the
// policy's distribution with `action_rng`.
RolloutBatch collect(const ActingPolicy& policy, VecEnv& envs, int n_steps, Rng& action_rng);

// Samples an index from a probability row by inverse CDF.
int sample_categorical(std::span<const double> probs, Rng& rng);

// Fills advantages with GAE(lambda) and returns = advantages + values.
// done flags stop bootstrapping; gamma must lie in (0, 1], lambda in [0, 1].
void compute_advantages(RolloutBatch& batch, double gamma, double lambda);

}  // namespace arpo
