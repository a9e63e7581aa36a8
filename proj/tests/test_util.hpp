#pragma once

#include <torch/torch.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <unistd.h>
#include <string>
#include <vector>

#include "core/distractor_world.hpp"
#include "core/policy.hpp"
#include "core/rollout.hpp"
#include "core/tensor_util.hpp"
#include "core/trainer.hpp"
#include "core/translator.hpp"

namespace arpo::tests {

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Fresh empty directory under the system temp dir.
inline std::string temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("arpo_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

// D_src(x) = w . x + b and D_cls(x) = softmax(V x + c) over flattened images.
class LinearCritic : public Discriminator {
 public:
  LinearCritic(int in_features, int n_domains, torch::Dtype dtype = torch::kFloat64) : n_(n_domains) {
    src = register_module("src", torch::nn::Linear(in_features, 1));
    cls = register_module("cls", torch::nn::Linear(in_features, n_domains));
    to(dtype);
  }
  CriticOutput forward(const torch::Tensor& images) override {
    const auto x = images.flatten(1);
    return {src->forward(x).squeeze(1), torch::softmax(cls->forward(x), -1)};
  }
  int n_domains() const override { return n_; }
  torch::nn::Linear src{nullptr}, cls{nullptr};

 private:
  int n_;
};

// D_src(x) = 0.5 * sum_i w_i x_i^2 + b, so grad D_src = w (.) x. D_cls as LinearCritic.
class QuadraticCritic : public Discriminator {
 public:
  QuadraticCritic(int in_features, int n_domains) : n_(n_domains) {
    w = register_parameter("w", torch::zeros({in_features}, torch::kFloat64));
    b = register_parameter("b", torch::zeros({}, torch::kFloat64));
    cls = register_module("cls", torch::nn::Linear(in_features, n_domains));
    cls->to(torch::kFloat64);
  }
  CriticOutput forward(const torch::Tensor& images) override {
    const auto x = images.flatten(1);
    return {0.5 * (w * x * x).sum(1) + b, torch::softmax(cls->forward(x), -1)};
  }
  int n_domains() const override { return n_; }
  torch::Tensor w, b;
  torch::nn::Linear cls{nullptr};

 private:
  int n_;
};

// Constant realness and uniform domain posterior, independent of the input.
class ConstantCritic : public Discriminator {
 public:
  ConstantCritic(int n_domains, double c) : n_(n_domains), c_(c) {}
  CriticOutput forward(const torch::Tensor& images) override {
    const auto b = images.size(0);
    auto opts = images.options();
    return {torch::full({b}, c_, opts), torch::full({b, n_}, 1.0 / n_, opts)};
  }
  int n_domains() const override { return n_; }

 private:
  int n_;
  double c_;
};

// Critic whose class head returns fixed probabilities regardless of input.
class FixedClassCritic : public Discriminator {
 public:
  explicit FixedClassCritic(torch::Tensor probs) : probs_(std::move(probs)) {}
  CriticOutput forward(const torch::Tensor& images) override {
    return {torch::zeros({images.size(0)}, images.options()), probs_};
  }
  int n_domains() const override { return static_cast<int>(probs_.size(1)); }

 private:
  torch::Tensor probs_;
};

// G(x, c) = x + offset (no clamp).
class AddGenerator : public Generator {
 public:
  AddGenerator(int n_domains, double offset) : n_(n_domains), offset_(offset) {}
  torch::Tensor forward(const torch::Tensor& images, const torch::Tensor&) override { return images + offset_; }
  int n_domains() const override { return n_; }

 private:
  int n_;
  double offset_;
};

// G(x, c) = s_c * x + t_c with learnable per-domain scalars.
class AffineGenerator : public Generator {
 public:
  AffineGenerator(std::vector<double> scale, std::vector<double> shift) {
    s = register_parameter("s", torch::tensor(scale, torch::kFloat64));
    t = register_parameter("t", torch::tensor(shift, torch::kFloat64));
  }
  torch::Tensor forward(const torch::Tensor& images, const torch::Tensor& targets) override {
    const auto sc = s.index_select(0, targets).view({-1, 1, 1, 1});
    const auto sh = t.index_select(0, targets).view({-1, 1, 1, 1});
    return sc * images + sh;
  }
  int n_domains() const override { return static_cast<int>(s.size(0)); }
  torch::Tensor s, t;
};

// Repaints distractor pixels with a target-dependent color; state pixels are
// copied unchanged.
class DistractorRecolorGenerator : public Generator {
 public:
  DistractorRecolorGenerator(const EnvConfig& env, int n_domains) : n_(n_domains) {
    mask_ = mask_to_tensor(distractor_mask(env), env.image_size, env.image_size);
  }
  torch::Tensor forward(const torch::Tensor& images, const torch::Tensor& targets) override {
    const auto m = mask_.to(images.dtype());
    const auto color = (targets.to(images.dtype()) + 1.0).div(n_ + 1).view({-1, 1, 1, 1});
    const auto shade = torch::tensor({1.0, 0.5, 0.25}, images.options()).view({1, 3, 1, 1});
    return images * (1 - m) + m * color * shade;
  }
  int n_domains() const override { return n_; }

 private:
  int n_;
  torch::Tensor mask_;
};

// Moves along a shortest path to the goal. Agent and goal come from the
// latent state; walls are decoded from the state pixels of the image.
class OraclePolicy : public ActingPolicy {
 public:
  explicit OraclePolicy(EnvConfig env) : env_(std::move(env)) {
    for (std::uint64_t seed = 0;; ++seed) {
      const Layout layout = make_layout(env_, seed);
      for (int r = 0; r < layout.grid_size; ++r) {
        for (int c = 0; c < layout.grid_size; ++c) {
          if (!layout.is_wall({r, c})) continue;
          const Image img = render(env_, layout, {layout.start, layout.goal}, make_style(env_, 0), 0);
          wall_ = pixel(img, {r, c});
          return;
        }
      }
    }
  }
  int n_actions() const override { return kNumActions; }
  void act(std::span<const Observation> observations, std::span<double> probs,
           std::span<double> values) const override {
    for (std::size_t i = 0; i < observations.size(); ++i) {
      const auto& lat = observations[i].latent;
      Layout layout;
      layout.grid_size = env_.grid_size;
      layout.walls.assign(static_cast<std::size_t>(env_.grid_size) * env_.grid_size, 0);
      for (int r = 0; r < env_.grid_size; ++r)
        for (int c = 0; c < env_.grid_size; ++c)
          layout.walls[static_cast<std::size_t>(r) * env_.grid_size + c] =
              pixel(observations[i].image, {r, c}) == wall_ ? 1 : 0;
      layout.goal = lat.goal;
      int best = kNoop, best_d = 1 << 30;
      for (int a = 1; a < kNumActions; ++a) {
        const GridPos next = apply_move(layout, lat.agent, a);
        if (next == lat.agent) continue;
        const int d = shortest_path_length(layout, next);
        if (d >= 0 && d < best_d) {
          best_d = d;
          best = a;
        }
      }
      for (int a = 0; a < kNumActions; ++a) probs[i * kNumActions + a] = a == best ? 1.0 : 0.0;
      values[i] = 0.0;
    }
  }

 private:
  std::array<float, 3> pixel(const Image& img, GridPos p) const {
    const int y = env_.grid_offset() + p.row * env_.cell_px + env_.cell_px / 2;
    const int x = env_.grid_offset() + p.col * env_.cell_px + env_.cell_px / 2;
    return {img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2)};
  }
  EnvConfig env_;
  std::array<float, 3> wall_{};
};

// Equal probability over all actions.
class UniformPolicy : public ActingPolicy {
 public:
  int n_actions() const override { return kNumActions; }
  void act(std::span<const Observation> obs, std::span<double> probs, std::span<double> values) const override {
    for (std::size_t i = 0; i < obs.size(); ++i) {
      for (int a = 0; a < kNumActions; ++a) probs[i * kNumActions + a] = 1.0 / kNumActions;
      values[i] = 0.0;
    }
  }
};

// Small training configuration for fast end-to-end tests.
inline TrainConfig tiny_config(Algo algo, std::uint64_t seed) {
  TrainConfig c;
  c.algo = algo;
  c.seed = seed;
  c.n_envs = 4;
  c.rollout_length = 32;
  c.total_timesteps = 4 * 32 * 4;
  c.warmup_observations = 128;
  c.gan_batch = 16;
  c.eval_every = 2;
  c.eval_episodes = 4;
  c.final_eval_episodes = 8;
  c.policy.minibatch_size = 64;
  c.policy.n_sgd_iter = 2;
  c.net.channels = {4, 8, 8};
  c.net.hidden = 32;
  c.gan.generator_channels = 4;
  c.gan.discriminator_channels = 4;
  c.gan.n_critic = 2;
  c.features.projection_dims = 8;
  c.features.hist_bins = 4;
  return c;
}

// Central-difference gradient of `f` w.r.t. every element of `params`.
template <typename F>
std::vector<double> numeric_gradient(const std::vector<torch::Tensor>& params, F f, double eps = 1e-6) {
  std::vector<double> g;
  // Parameters are edited under no-grad; f itself may need autograd (the
  // gradient penalty differentiates through its input).
  auto set = [](torch::Tensor& flat, int64_t i, double v) {
    torch::NoGradGuard no_grad;
    flat[i] = v;
  };
  for (const auto& p : params) {
    auto flat = p.view(-1);
    for (int64_t i = 0; i < flat.numel(); ++i) {
      const double orig = flat[i].item<double>();
      set(flat, i, orig + eps);
      const double up = f();
      set(flat, i, orig - eps);
      const double down = f();
      set(flat, i, orig);
      g.push_back((up - down) / (2 * eps));
    }
  }
  return g;
}

inline std::vector<double> flatten_grads(const std::vector<torch::Tensor>& grads) {
  std::vector<double> out;
  for (const auto& t : grads) {
    const auto c = t.contiguous().to(torch::kFloat64).view(-1);
    for (int64_t i = 0; i < c.numel(); ++i) out.push_back(c[i].item<double>());
  }
  return out;
}

// ||a - b|| / max(||a||, ||b||, 1e-12).
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
}

}  // namespace arpo::tests
