#pragma once

#include <torch/torch.h>

#include <array>
#include <memory>
#include <optional>
#include <string>

#include "core/rng.hpp"
#include "core/rollout.hpp"

namespace arpo {

struct ActorCriticOutput {
  torch::Tensor logits;  // [B, A]
  torch::Tensor values;  // [B]
};

struct ActionDistributions {
  torch::Tensor probs;   // [B, A], float64
  torch::Tensor values;  // [B], float64
};

// Policy/value network over [B, 3, H, W] images in [0, 1].
class ActorCritic : public torch::nn::Module {
 public:
  virtual ActorCriticOutput forward(const torch::Tensor& images) = 0;
  virtual int n_actions() const = 0;
  // Re-draws every parameter from `rng`; the action head is scaled down so a
  // fresh policy is close to uniform.
  virtual void reset_parameters(Rng& rng) = 0;
};

struct ConvActorCriticOptions {
  int image_size = 32;
  int n_actions = kNumActions;
  std::array<int, 3> channels = {16, 32, 32};
  int hidden = 256;
};

// Three conv layers (stride 1, 2, 2) and one hidden dense layer shared by a
// linear action head and a linear value head. An optional input mask zeroes
// pixels before the trunk.
class ConvActorCritic : public ActorCritic {
 public:
  explicit ConvActorCritic(ConvActorCriticOptions options);
  ActorCriticOutput forward(const torch::Tensor& images) override;
  int n_actions() const override { return options_.n_actions; }
  void reset_parameters(Rng& rng) override;
  void set_input_mask(const torch::Tensor& mask);
  const ConvActorCriticOptions& options() const { return options_; }

 private:
  ConvActorCriticOptions options_;
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, conv3_{nullptr};
  torch::nn::Linear hidden_{nullptr}, policy_head_{nullptr}, value_head_{nullptr};
  torch::Tensor input_mask_;
};

// Linear logits and value over the flattened image. Small enough for
// finite-difference checks (1x1x3 images with 3 actions: 16 parameters).
class LinearActorCritic : public ActorCritic {
 public:
  LinearActorCritic(int in_features, int n_actions);
  ActorCriticOutput forward(const torch::Tensor& images) override;
  int n_actions() const override { return n_actions_; }
  void reset_parameters(Rng& rng) override;

 private:
  int in_features_;
  int n_actions_;
  torch::nn::Linear policy_{nullptr}, value_{nullptr};
};

struct PolicyConfig {
  double lr = 5e-4;
  double clip = 0.2;
  bool clip_surrogate = true;  // false: unclipped ratio * advantage objective
  double vf_clip = 0.2;
  double vf_coeff = 0.5;
  double entropy_coeff = 0.01;
  double grad_clip = 0.5;
  int n_sgd_iter = 3;
  int minibatch_size = 256;
  bool normalize_advantages = true;
};

struct PolicyLossReport {
  double surrogate = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double adv_kl = 0.0;
  double total = 0.0;
};

// Differentiable loss terms of one minibatch.
struct PolicyLossTerms {
  torch::Tensor surrogate, value_loss, entropy, adv_kl, total;
};

struct PolicyMinibatch {
  torch::Tensor observations;  // fed to the RL loss
  torch::Tensor actions;       // int64 [B]
  torch::Tensor old_action_probs;  // pi_old(a_t | x_t) [B]
  torch::Tensor advantages;    // [B]
  torch::Tensor returns;       // [B]
  torch::Tensor old_values;    // [B]
  torch::Tensor originals;     // x_t for the KL term (undefined: no KL)
  torch::Tensor translated;    // x'_t aligned with originals
};

// Clipped PPO surrogate -E[min(rho A, clip(rho, 1-eps, 1+eps) A)], with
// rho = exp(logp_new - log p_old). A non-finite eps gives the unclipped form.
torch::Tensor ppo_surrogate(const torch::Tensor& logp_new, const torch::Tensor& old_probs,
                            const torch::Tensor& advantages, double clip_eps);

// Mean over the batch of KL(p_i || q_i) with probabilities clamped to >= 1e-8.
torch::Tensor adversarial_kl(const torch::Tensor& p, const torch::Tensor& q);

// surrogate + vf_coeff * value_loss - entropy_coeff * entropy + beta1 * adv_kl.
PolicyLossTerms policy_loss(ActorCritic& net, const PolicyMinibatch& mb, const PolicyConfig& cfg,
                            double beta1);

class PolicyModel : public ActingPolicy {
 public:
  PolicyModel(std::shared_ptr<ActorCritic> net, PolicyConfig config);

  int n_actions() const override { return net_->n_actions(); }
  void act(std::span<const Observation> observations, std::span<double> probs,
           std::span<double> values) const override;

  // Action probabilities [B, A] and values [B] without gradient tracking.
  ActionDistributions action_dist(const torch::Tensor& images) const;

  // n_sgd_iter epochs of shuffled minibatch updates on the batch. The RL loss
  // reads `rl_observations` (the batch observations when undefined); the KL
  // term compares the batch observations with `translated` and is skipped
  // when beta1 == 0 or `translated` is undefined.
  PolicyLossReport policy_step(const RolloutBatch& batch, const torch::Tensor& observations,
                               const torch::Tensor& rl_observations,
                               const torch::Tensor& translated, double beta1, Rng& shuffle_rng);

  // Mean adversarial KL of the current policy between two aligned batches.
  double measure_kl(const torch::Tensor& originals, const torch::Tensor& translated) const;

  ActorCritic& net() { return *net_; }
  const PolicyConfig& config() const { return config_; }
  torch::Dtype dtype() const;
  std::vector<torch::Tensor> parameters() const { return net_->parameters(); }
  torch::optim::Adam& optimizer() { return *optimizer_; }

  void save(torch::serialize::OutputArchive& archive) const;
  void load(torch::serialize::InputArchive& archive);

 private:
  std::shared_ptr<ActorCritic> net_;
  PolicyConfig config_;
  std::unique_ptr<torch::optim::Adam> optimizer_;
};

}  // namespace arpo
