#include "core/policy.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "core/errors.hpp"
#include "core/tensor_util.hpp"

namespace arpo {
namespace {

constexpr double kReluGain = 1.4142135623730951;

}  // namespace

ConvActorCritic::ConvActorCritic(ConvActorCriticOptions options) : options_(options) {
  if (options_.image_size < 4 || options_.n_actions < 1) throw ConfigError("bad actor-critic options");
  using torch::nn::Conv2dOptions;
  const auto& ch = options_.channels;
  conv1_ = register_module("conv1", torch::nn::Conv2d(Conv2dOptions(3, ch[0], 3).stride(1).padding(1)));
  conv2_ = register_module("conv2", torch::nn::Conv2d(Conv2dOptions(ch[0], ch[1], 3).stride(2).padding(1)));
  conv3_ = register_module("conv3", torch::nn::Conv2d(Conv2dOptions(ch[1], ch[2], 3).stride(2).padding(1)));
  const int s2 = (options_.image_size - 1) / 2 + 1;
  const int s3 = (s2 - 1) / 2 + 1;
  hidden_ = register_module("hidden", torch::nn::Linear(ch[2] * s3 * s3, options_.hidden));
  policy_head_ = register_module("policy_head", torch::nn::Linear(options_.hidden, options_.n_actions));
  value_head_ = register_module("value_head", torch::nn::Linear(options_.hidden, 1));
}

void ConvActorCritic::reset_parameters(Rng& rng) {
  init_uniform_fan_in(conv1_->weight, conv1_->bias, kReluGain, rng);
  init_uniform_fan_in(conv2_->weight, conv2_->bias, kReluGain, rng);
  init_uniform_fan_in(conv3_->weight, conv3_->bias, kReluGain, rng);
  init_uniform_fan_in(hidden_->weight, hidden_->bias, kReluGain, rng);
  init_uniform_fan_in(policy_head_->weight, policy_head_->bias, 0.01, rng);
  init_uniform_fan_in(value_head_->weight, value_head_->bias, 1.0, rng);
}

void ConvActorCritic::set_input_mask(const torch::Tensor& mask) { input_mask_ = mask; }

ActorCriticOutput ConvActorCritic::forward(const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != options_.image_size ||
      images.size(3) != options_.image_size) {
    std::ostringstream os;
    os << "actor-critic expects [B, 3, " << options_.image_size << ", " << options_.image_size
       << "] input, got " << images.sizes();
    throw ShapeError(os.str());
  }
  auto x = images;
  if (input_mask_.defined()) x = x * input_mask_.to(x.dtype());
  x = torch::relu(conv1_->forward(x));
  x = torch::relu(conv2_->forward(x));
  x = torch::relu(conv3_->forward(x));
  x = torch::relu(hidden_->forward(x.flatten(1)));
  return {policy_head_->forward(x), value_head_->forward(x).squeeze(-1)};
}

LinearActorCritic::LinearActorCritic(int in_features, int n_actions)
    : in_features_(in_features), n_actions_(n_actions) {
  policy_ = register_module("policy", torch::nn::Linear(in_features, n_actions));
  value_ = register_module("value", torch::nn::Linear(in_features, 1));
}

void LinearActorCritic::reset_parameters(Rng& rng) {
  init_uniform_fan_in(policy_->weight, policy_->bias, 1.0, rng);
  init_uniform_fan_in(value_->weight, value_->bias, 1.0, rng);
}

ActorCriticOutput LinearActorCritic::forward(const torch::Tensor& images) {
  const auto x = images.flatten(1);
  if (x.size(1) != in_features_) throw ShapeError("linear actor-critic input size mismatch");
  return {policy_->forward(x), value_->forward(x).squeeze(-1)};
}

torch::Tensor ppo_surrogate(const torch::Tensor& logp_new, const torch::Tensor& old_probs,
                            const torch::Tensor& advantages, double clip_eps) {
  if ((old_probs <= 0).any().item<bool>()) {
    throw NumericError("zero old-policy probability in ratio computation");
  }
  const auto ratio = torch::exp(logp_new - torch::log(old_probs));
  const auto unclipped = ratio * advantages;
  if (!std::isfinite(clip_eps)) return -unclipped.mean();
  const auto clipped = torch::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * advantages;
  return -torch::min(unclipped, clipped).mean();
}

torch::Tensor adversarial_kl(const torch::Tensor& p, const torch::Tensor& q) {
  if (p.sizes() != q.sizes()) throw ShapeError("KL operands differ in shape");
  const auto log_p = torch::log(torch::clamp_min(p, 1e-8));
  const auto log_q = torch::log(torch::clamp_min(q, 1e-8));
  return (p * (log_p - log_q)).sum(-1).mean();
}

PolicyLossTerms policy_loss(ActorCritic& net, const PolicyMinibatch& mb, const PolicyConfig& cfg,
                            double beta1) {
  PolicyLossTerms t;
  const auto out = net.forward(mb.observations);
  const auto logp_all = torch::log_softmax(out.logits, -1);
  const auto probs = logp_all.exp();
  const auto logp = logp_all.gather(1, mb.actions.unsqueeze(1)).squeeze(1);
  const double eps = cfg.clip_surrogate ? cfg.clip : std::numeric_limits<double>::infinity();
  t.surrogate = ppo_surrogate(logp, mb.old_action_probs, mb.advantages, eps);

  const auto v = out.values;
  const auto err = (v - mb.returns).pow(2);
  if (std::isfinite(cfg.vf_clip) && cfg.vf_clip > 0) {
    const auto v_clipped = mb.old_values + torch::clamp(v - mb.old_values, -cfg.vf_clip, cfg.vf_clip);
    t.value_loss = torch::max(err, (v_clipped - mb.returns).pow(2)).mean();
  } else {
    t.value_loss = err.mean();
  }
  t.entropy = -(probs * logp_all).sum(-1).mean();

  if (beta1 != 0.0 && mb.translated.defined()) {
    const auto p = mb.originals.is_same(mb.observations)
                       ? torch::softmax(out.logits, -1)
                       : torch::softmax(net.forward(mb.originals).logits, -1);
    const auto q = torch::softmax(net.forward(mb.translated).logits, -1);
    t.adv_kl = adversarial_kl(p, q);
  } else {
    t.adv_kl = torch::zeros({}, v.options());
  }
  t.total = t.surrogate + cfg.vf_coeff * t.value_loss - cfg.entropy_coeff * t.entropy + beta1 * t.adv_kl;
  return t;
}

PolicyModel::PolicyModel(std::shared_ptr<ActorCritic> net, PolicyConfig config)
    : net_(std::move(net)), config_(config) {
  if (!net_) throw InvalidArgument("policy network is null");
  optimizer_ = std::make_unique<torch::optim::Adam>(net_->parameters(),
                                                    torch::optim::AdamOptions(config_.lr));
}

torch::Dtype PolicyModel::dtype() const {
  const auto params = net_->parameters();
  return params.empty() ? torch::kFloat32 : params.front().scalar_type();
}

ActionDistributions PolicyModel::action_dist(const torch::Tensor& images) const {
  torch::NoGradGuard no_grad;
  auto out = net_->forward(images.to(dtype()));
  return {torch::softmax(out.logits.to(torch::kFloat64), -1), out.values.to(torch::kFloat64)};
}

void PolicyModel::act(std::span<const Observation> observations, std::span<double> probs,
                      std::span<double> values) const {
  const std::size_t n = observations.size();
  const auto a = static_cast<std::size_t>(n_actions());
  if (probs.size() < n * a || values.size() < n) throw ShapeError("act(): output buffers too small");
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < n; start += kChunk) {
    const std::size_t len = std::min(kChunk, n - start);
    const auto out = action_dist(images_to_tensor(observations.subspan(start, len), dtype()));
    const auto p = out.probs.contiguous();
    const auto v = out.values.contiguous();
    std::copy(p.data_ptr<double>(), p.data_ptr<double>() + len * a, probs.begin() + static_cast<std::ptrdiff_t>(start * a));
    std::copy(v.data_ptr<double>(), v.data_ptr<double>() + len, values.begin() + static_cast<std::ptrdiff_t>(start));
  }
}

double PolicyModel::measure_kl(const torch::Tensor& originals, const torch::Tensor& translated) const {
  torch::NoGradGuard no_grad;
  const auto n = originals.size(0);
  double total = 0.0;
  constexpr long kChunk = 512;
  for (long s = 0; s < n; s += kChunk) {
    const long len = std::min<long>(kChunk, n - s);
    const auto p = action_dist(originals.narrow(0, s, len)).probs;
    const auto q = action_dist(translated.narrow(0, s, len)).probs;
    total += adversarial_kl(p, q).item<double>() * static_cast<double>(len);
  }
  return n > 0 ? total / static_cast<double>(n) : 0.0;
}

PolicyLossReport PolicyModel::policy_step(const RolloutBatch& batch, const torch::Tensor& observations,
                                          const torch::Tensor& rl_observations,
                                          const torch::Tensor& translated, double beta1,
                                          Rng& shuffle_rng) {
  const auto n = static_cast<long>(batch.size());
  if (n == 0) throw InvalidArgument("policy_step on an empty batch");
  if (batch.advantages.size() != batch.size() || batch.returns.size() != batch.size()) {
    throw InvalidArgument("policy_step needs advantages; call compute_advantages first");
  }
  if (observations.size(0) != n) throw ShapeError("observation tensor does not match the batch");
  if (translated.defined() && translated.sizes() != observations.sizes()) {
    throw ShapeError("translated batch does not match the observations");
  }
  const auto dt = dtype();
  const auto f64 = torch::TensorOptions().dtype(torch::kFloat64);

  std::vector<double> adv = batch.advantages;
  if (config_.normalize_advantages && adv.size() > 1) {
    const double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / static_cast<double>(adv.size());
    double var = 0.0;
    for (double a : adv) var += (a - mean) * (a - mean);
    const double sd = std::sqrt(var / static_cast<double>(adv.size()));
    for (double& a : adv) a = (a - mean) / (sd + 1e-8);
  }
  std::vector<double> old_p(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    old_p[i] = batch.action_dists[i * static_cast<std::size_t>(batch.n_actions) +
                                  static_cast<std::size_t>(batch.actions[i])];
  }
  const auto obs_all = observations.to(dt);
  const auto rl_all = rl_observations.defined() ? rl_observations.to(dt) : obs_all;
  const auto trans_all = translated.defined() ? translated.to(dt) : torch::Tensor();
  const auto actions_all = torch::tensor(batch.actions, torch::kInt64);
  const auto old_p_all = torch::tensor(old_p, f64).to(dt);
  const auto adv_all = torch::tensor(adv, f64).to(dt);
  const auto ret_all = torch::tensor(batch.returns, f64).to(dt);
  const auto val_all = torch::tensor(batch.values, f64).to(dt);

  std::vector<long> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0L);
  const long mb_size = std::max(1, config_.minibatch_size);
  const auto params = net_->parameters();

  PolicyLossReport report;
  int updates = 0;
  for (int epoch = 0; epoch < config_.n_sgd_iter; ++epoch) {
    shuffle(order.begin(), order.end(), shuffle_rng);
    for (long start = 0; start < n; start += mb_size) {
      const long len = std::min(mb_size, n - start);
      const auto idx = torch::tensor(std::vector<long>(order.begin() + start, order.begin() + start + len),
                                     torch::kInt64);
      PolicyMinibatch mb;
      mb.observations = rl_all.index_select(0, idx);
      mb.actions = actions_all.index_select(0, idx);
      mb.old_action_probs = old_p_all.index_select(0, idx);
      mb.advantages = adv_all.index_select(0, idx);
      mb.returns = ret_all.index_select(0, idx);
      mb.old_values = val_all.index_select(0, idx);
      if (trans_all.defined()) {
        mb.originals = rl_all.is_same(obs_all) ? mb.observations : obs_all.index_select(0, idx);
        mb.translated = trans_all.index_select(0, idx);
      }
      const auto terms = policy_loss(*net_, mb, config_, beta1);
      const double total = terms.total.item<double>();
      if (!std::isfinite(total)) {
        std::ostringstream os;
        os << "non-finite policy loss: surrogate=" << terms.surrogate.item<double>()
           << " value_loss=" << terms.value_loss.item<double>()
           << " entropy=" << terms.entropy.item<double>() << " adv_kl=" << terms.adv_kl.item<double>();
        throw NumericError(os.str());
      }
      double kl = terms.adv_kl.item<double>();
      if (beta1 == 0.0 && mb.translated.defined()) {
        // Logged only; the update itself never sees the translations.
        torch::NoGradGuard no_grad;
        kl = adversarial_kl(torch::softmax(net_->forward(mb.originals).logits, -1),
                            torch::softmax(net_->forward(mb.translated).logits, -1))
                 .item<double>();
      }
      optimizer_->zero_grad();
      terms.total.backward();
      if (config_.grad_clip > 0) torch::nn::utils::clip_grad_norm_(params, config_.grad_clip);
      optimizer_->step();

      report.surrogate += terms.surrogate.item<double>();
      report.value_loss += terms.value_loss.item<double>();
      report.entropy += terms.entropy.item<double>();
      report.adv_kl += kl;
      report.total += total;
      ++updates;
    }
  }
  const double inv = 1.0 / updates;
  report.surrogate *= inv;
  report.value_loss *= inv;
  report.entropy *= inv;
  report.adv_kl *= inv;
  report.total *= inv;
  return report;
}

void PolicyModel::save(torch::serialize::OutputArchive& archive) const {
  torch::serialize::OutputArchive net_ar, opt_ar;
  net_->save(net_ar);
  optimizer_->save(opt_ar);
  archive.write("net", net_ar);
  archive.write("optimizer", opt_ar);
}

void PolicyModel::load(torch::serialize::InputArchive& archive) {
  torch::serialize::InputArchive net_ar, opt_ar;
  archive.read("net", net_ar);
  archive.read("optimizer", opt_ar);
  net_->load(net_ar);
  optimizer_->load(opt_ar);
}

}  // namespace arpo
