#include "core/rollout.hpp"

#include <cmath>
#include <string>

#include "core/errors.hpp"

namespace arpo {

void RolloutBatch::validate() const {
  const std::size_t n = actions.size();
  if (n != static_cast<std::size_t>(n_envs) * n_steps) {
    throw ShapeError("rollout size does not equal n_envs * n_steps");
  }
  auto same = [n](std::size_t k, const char* name) {
    if (k != n) throw ShapeError(std::string("rollout field '") + name + "' has wrong length");
  };
  same(observations.size(), "observations");
  same(rewards.size(), "rewards");
  same(values.size(), "values");
  same(dones.size(), "dones");
  same(style_ids.size(), "style_ids");
  same(action_dists.size() / static_cast<std::size_t>(n_actions), "action_dists");
  if (action_dists.size() % static_cast<std::size_t>(n_actions) != 0) {
    throw ShapeError("action_dists not a multiple of n_actions");
  }
  if (!advantages.empty()) same(advantages.size(), "advantages");
  if (!returns.empty()) same(returns.size(), "returns");
  if (last_values.size() != static_cast<std::size_t>(n_envs)) {
    throw ShapeError("last_values must hold one bootstrap value per env");
  }
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (int a = 0; a < n_actions; ++a) s += action_dists[i * n_actions + a];
    if (std::abs(s - 1.0) > 1e-6) throw ShapeError("action distribution does not sum to 1");
  }
  for (double a : advantages) {
    if (!std::isfinite(a)) throw NumericError("non-finite advantage");
  }
}

VecEnv::VecEnv(const EnvConfig& config, Split split, int n_envs, std::uint64_t seed)
    : sampler_(config, split), rng_(seed) {
  if (n_envs < 1) throw InvalidArgument("n_envs must be >= 1");
  for (int i = 0; i < n_envs; ++i) {
    envs_.emplace_back(config, split);
    current_.push_back(envs_.back().reset(sampler_.sample(rng_)));
    running_.push_back(0.0);
  }
}

StepResult VecEnv::step(int i, int action, double* finished_return) {
  const auto k = static_cast<std::size_t>(i);
  StepResult r = envs_[k].step(action);
  running_[k] += r.reward;
  if (r.done) {
    if (finished_return) *finished_return = running_[k];
    running_[k] = 0.0;
    current_[k] = envs_[k].reset(sampler_.sample(rng_));
  } else {
    current_[k] = r.observation;
  }
  return r;
}

VecEnv::State VecEnv::state() const {
  State s;
  for (const auto& e : envs_) s.envs.push_back(e.snapshot());
  s.running = running_;
  s.rng = rng_state(rng_);
  return s;
}

void VecEnv::restore(const State& s) {
  if (s.envs.size() != envs_.size()) throw InvalidArgument("env count mismatch on restore");
  for (std::size_t i = 0; i < envs_.size(); ++i) {
    envs_[i].restore(s.envs[i]);
    const auto& e = envs_[i];
    current_[i] = Observation{
        render(e.config(), e.layout(), e.latent(), make_style(e.config(), e.level().style_id),
               e.level().dynamic_phase),
        e.latent()};
  }
  running_ = s.running;
  restore_rng_state(rng_, s.rng);
}

int sample_categorical(std::span<const double> probs, Rng& rng) {
  const double u = uniform01(rng);
  double c = 0.0;
  for (std::size_t a = 0; a < probs.size(); ++a) {
    c += probs[a];
    if (u < c) return static_cast<int>(a);
  }
  // Rounding left u beyond the final partial sum: take the last action with mass.
  for (std::size_t a = probs.size(); a-- > 0;) {
    if (probs[a] > 0) return static_cast<int>(a);
  }
  return 0;
}

RolloutBatch collect(const ActingPolicy& policy, VecEnv& envs, int n_steps, Rng& action_rng) {
  if (n_steps < 1) throw InvalidArgument("n_steps must be >= 1");
  const int n_envs = envs.size();
  const int n_actions = policy.n_actions();
  RolloutBatch batch;
  batch.n_envs = n_envs;
  batch.n_steps = n_steps;
  batch.n_actions = n_actions;
  const std::size_t total = static_cast<std::size_t>(n_envs) * n_steps;
  batch.observations.reserve(total);
  batch.actions.reserve(total);
  batch.rewards.reserve(total);
  batch.values.reserve(total);
  batch.action_dists.reserve(total * n_actions);
  batch.dones.reserve(total);
  batch.style_ids.reserve(total);

  std::vector<double> probs(static_cast<std::size_t>(n_envs) * n_actions);
  std::vector<double> values(static_cast<std::size_t>(n_envs));
  for (int t = 0; t < n_steps; ++t) {
    const auto& obs = envs.observations();
    policy.act(obs, probs, values);
    for (int e = 0; e < n_envs; ++e) {
      const std::span<const double> row(probs.data() + static_cast<std::size_t>(e) * n_actions,
                                        static_cast<std::size_t>(n_actions));
      const int action = sample_categorical(row, action_rng);
      batch.observations.push_back(obs[static_cast<std::size_t>(e)].image);
      batch.style_ids.push_back(envs.env(e).level().style_id);
      batch.actions.push_back(action);
      batch.values.push_back(values[static_cast<std::size_t>(e)]);
      batch.action_dists.insert(batch.action_dists.end(), row.begin(), row.end());
      double finished = 0.0;
      const StepResult r = envs.step(e, action, &finished);
      batch.rewards.push_back(r.reward);
      batch.dones.push_back(r.done ? 1 : 0);
      if (r.done) batch.episode_returns.push_back(finished);
    }
  }
  policy.act(envs.observations(), probs, values);
  batch.last_values = values;
  return batch;
}

void compute_advantages(RolloutBatch& batch, double gamma, double lambda) {
  if (!(gamma > 0.0 && gamma <= 1.0)) {
    throw DomainError("gamma must lie in (0, 1], got " + std::to_string(gamma));
  }
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw DomainError("lambda must lie in [0, 1], got " + std::to_string(lambda));
  }
  const std::size_t n_envs = static_cast<std::size_t>(batch.n_envs);
  const std::size_t n_steps = static_cast<std::size_t>(batch.n_steps);
  if (batch.rewards.size() != n_envs * n_steps || batch.values.size() != n_envs * n_steps ||
      batch.dones.size() != n_envs * n_steps || batch.last_values.size() != n_envs) {
    throw ShapeError("compute_advantages: inconsistent batch field lengths");
  }
  batch.advantages.assign(n_envs * n_steps, 0.0);
  batch.returns.assign(n_envs * n_steps, 0.0);
  for (std::size_t e = 0; e < n_envs; ++e) {
    double gae = 0.0;
    for (std::size_t t = n_steps; t-- > 0;) {
      const std::size_t i = t * n_envs + e;
      const double next_value = t + 1 == n_steps ? batch.last_values[e] : batch.values[i + n_envs];
      const double nonterminal = batch.dones[i] ? 0.0 : 1.0;
      const double delta = batch.rewards[i] + gamma * next_value * nonterminal - batch.values[i];
      gae = delta + gamma * lambda * nonterminal * gae;
      batch.advantages[i] = gae;
      batch.returns[i] = gae + batch.values[i];
    }
  }
}

}  // namespace arpo
