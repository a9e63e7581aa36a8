#include "core/translator.hpp"

#include <cmath>
#include <sstream>

#include "core/errors.hpp"
#include "core/tensor_util.hpp"

namespace arpo {
namespace {

constexpr double kReluGain = 1.4142135623730951;
constexpr double kLeakySlope = 0.01;

void check_labels(const torch::Tensor& labels, int n_domains, const char* what) {
  if (labels.dim() != 1) throw ShapeError(std::string(what) + " must be a 1-D label tensor");
  if (labels.numel() == 0) return;
  const auto lo = labels.min().item<std::int64_t>();
  const auto hi = labels.max().item<std::int64_t>();
  if (lo < 0 || hi >= n_domains) {
    std::ostringstream os;
    os << what << " label out of range [0, " << n_domains << "): " << (lo < 0 ? lo : hi);
    throw DomainError(os.str());
  }
}

void check_images(const torch::Tensor& images, const char* what) {
  if (images.dim() != 4 || images.size(1) != 3) {
    std::ostringstream os;
    os << what << " must be [B, 3, H, W], got " << images.sizes();
    throw ShapeError(os.str());
  }
}

// Sets .grad of `params` to d loss / d params and steps the optimizer. Other
// leaves of the graph never receive gradients.
void apply_gradients(const torch::Tensor& loss, const std::vector<torch::Tensor>& params,
                     torch::optim::Optimizer& opt) {
  auto grads = torch::autograd::grad({loss}, params, {}, /*retain_graph=*/false,
                                     /*create_graph=*/false, /*allow_unused=*/true);
  torch::NoGradGuard no_grad;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i];
    p.mutable_grad() = grads[i].defined() ? grads[i] : torch::zeros_like(p);
  }
  opt.step();
}

torch::Tensor alpha_like(const torch::Tensor& images, Rng& rng) {
  const auto n = images.size(0);
  std::vector<double> a(static_cast<std::size_t>(n));
  for (auto& v : a) v = uniform01(rng);
  return torch::from_blob(a.data(), {n}, torch::kFloat64).to(images.dtype());
}

double scalar(const torch::Tensor& t) { return t.defined() ? t.item<double>() : 0.0; }

}  // namespace

ConvGenerator::ConvGenerator(int n_domains, int channels) : n_domains_(n_domains) {
  if (n_domains < 1 || channels < 1) throw ConfigError("bad generator options");
  using torch::nn::Conv2dOptions;
  enc_ = register_module("enc", torch::nn::Conv2d(Conv2dOptions(3 + n_domains, channels, 4).stride(2).padding(1)));
  mid_ = register_module("mid", torch::nn::Conv2d(Conv2dOptions(channels, channels, 3).stride(1).padding(1)));
  dec_ = register_module(
      "dec", torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(channels, 3, 4).stride(2).padding(1)));
}

void ConvGenerator::reset_parameters(Rng& rng) {
  init_uniform_fan_in(enc_->weight, enc_->bias, kReluGain, rng);
  init_uniform_fan_in(mid_->weight, mid_->bias, kReluGain, rng);
  torch::NoGradGuard no_grad;
  dec_->weight.zero_();
  dec_->bias.zero_();
}

torch::Tensor ConvGenerator::forward(const torch::Tensor& images, const torch::Tensor& targets) {
  check_images(images, "generator input");
  if (images.size(2) < 2 || images.size(3) < 2) throw ShapeError("generator input must be at least 2x2");
  if (targets.dim() != 1 || targets.size(0) != images.size(0))
    throw ShapeError("generator targets must be [B] aligned with the images");
  check_labels(targets, n_domains_, "target");
  const auto b = images.size(0), h = images.size(2), w = images.size(3);
  const auto x = images * 2.0 - 1.0;
  const auto planes = torch::one_hot(targets, n_domains_)
                          .to(images.dtype())
                          .view({b, n_domains_, 1, 1})
                          .expand({b, n_domains_, h, w});
  auto z = torch::relu(enc_->forward(torch::cat({x, planes}, 1)));
  z = torch::relu(mid_->forward(z));
  const auto delta = dec_->forward(z, std::vector<std::int64_t>{h, w});
  return torch::clamp((x + delta + 1.0) * 0.5, 0.0, 1.0);
}

ConvDiscriminator::ConvDiscriminator(int n_domains, int channels) : n_domains_(n_domains) {
  if (n_domains < 1 || channels < 1) throw ConfigError("bad discriminator options");
  using torch::nn::Conv2dOptions;
  conv1_ = register_module("conv1", torch::nn::Conv2d(Conv2dOptions(3, channels, 4).stride(2).padding(1)));
  conv2_ = register_module("conv2",
                           torch::nn::Conv2d(Conv2dOptions(channels, 2 * channels, 4).stride(2).padding(1)));
  src_head_ = register_module("src_head", torch::nn::Conv2d(Conv2dOptions(2 * channels, 1, 3).stride(1).padding(1)));
  cls_head_ = register_module("cls_head", torch::nn::Linear(2 * channels, n_domains));
}

void ConvDiscriminator::reset_parameters(Rng& rng) {
  init_uniform_fan_in(conv1_->weight, conv1_->bias, kReluGain, rng);
  init_uniform_fan_in(conv2_->weight, conv2_->bias, kReluGain, rng);
  init_uniform_fan_in(src_head_->weight, src_head_->bias, 1.0, rng);
  init_uniform_fan_in(cls_head_->weight, cls_head_->bias, 1.0, rng);
}

CriticOutput ConvDiscriminator::forward(const torch::Tensor& images) {
  check_images(images, "discriminator input");
  if (images.size(2) < 4 || images.size(3) < 4) throw ShapeError("discriminator input must be at least 4x4");
  auto z = torch::leaky_relu(conv1_->forward(images * 2.0 - 1.0), kLeakySlope);
  z = torch::leaky_relu(conv2_->forward(z), kLeakySlope);
  CriticOutput out;
  out.src = src_head_->forward(z).mean({1, 2, 3});
  out.cls_probs = torch::softmax(cls_head_->forward(z.mean({2, 3})), 1);
  return out;
}

torch::Tensor sample_other_domains(const torch::Tensor& sources, int n_domains, Rng& rng) {
  if (n_domains < 2) throw DomainError("translation needs at least two domains");
  check_labels(sources, n_domains, "source");
  const auto src = sources.to(torch::kInt64).contiguous();
  const auto* s = src.data_ptr<std::int64_t>();
  auto out = torch::empty_like(src);
  auto* o = out.data_ptr<std::int64_t>();
  for (std::int64_t i = 0; i < src.numel(); ++i) {
    const auto shift = 1 + static_cast<std::int64_t>(uniform_index(rng, static_cast<std::uint64_t>(n_domains - 1)));
    o[i] = (s[i] + shift) % n_domains;
  }
  return out;
}

AdversarialTerms adversarial_loss(Discriminator& d, const torch::Tensor& real, const torch::Tensor& fake,
                                  const torch::Tensor& alpha, double lambda_gp, bool create_graph) {
  check_images(real, "real batch");
  if (!fake.sizes().equals(real.sizes())) throw ShapeError("real and fake batches differ in shape");
  if (real.size(0) == 0) throw InvalidArgument("empty batch");
  if (alpha.dim() != 1 || alpha.size(0) != real.size(0)) throw ShapeError("alpha must be [B]");
  AdversarialTerms out;
  out.adv = d.forward(real).src.mean() - d.forward(fake).src.mean();

  const auto a = alpha.to(real.dtype()).view({-1, 1, 1, 1});
  auto x_hat = (a * real.detach() + (1.0 - a) * fake.detach()).requires_grad_(true);
  const auto score = d.forward(x_hat).src;
  torch::Tensor grad;
  if (score.requires_grad()) {
    grad = torch::autograd::grad({score.sum()}, {x_hat}, {}, /*retain_graph=*/true, create_graph,
                                 /*allow_unused=*/true)[0];
  }
  if (!grad.defined()) grad = torch::zeros_like(x_hat);
  const auto norm = grad.flatten(1).norm(2, 1);
  out.grad_penalty = lambda_gp * (norm - 1.0).pow(2).mean();
  return out;
}

torch::Tensor classification_loss(const torch::Tensor& cls_probs, const torch::Tensor& labels) {
  if (cls_probs.dim() != 2) throw ShapeError("class probabilities must be [B, n_domains]");
  if (cls_probs.size(0) == 0) throw InvalidArgument("classification loss of an empty batch");
  if (labels.dim() != 1 || labels.size(0) != cls_probs.size(0))
    throw ShapeError("labels must be [B] aligned with the probabilities");
  check_labels(labels, static_cast<int>(cls_probs.size(1)), "class");
  const auto picked = cls_probs.gather(1, labels.to(torch::kInt64).view({-1, 1})).squeeze(1);
  return -torch::log(torch::clamp_min(picked, 1e-8)).mean();
}

ClassificationTerms classification_losses(Discriminator& d, const torch::Tensor& real,
                                          const torch::Tensor& real_labels, const torch::Tensor& fake,
                                          const torch::Tensor& fake_targets) {
  ClassificationTerms out;
  out.real = classification_loss(d.forward(real).cls_probs, real_labels);
  out.fake = classification_loss(d.forward(fake).cls_probs, fake_targets);
  return out;
}

torch::Tensor reconstruction_loss(Generator& g, const torch::Tensor& images, const torch::Tensor& sources,
                                  const torch::Tensor& targets) {
  const auto fake = g.forward(images, targets);
  return (images - g.forward(fake, sources)).abs().mean();
}

GeneratorLossTerms generator_loss(Generator& g, Discriminator& d, ActorCritic* policy,
                                  const torch::Tensor& images, const torch::Tensor& sources,
                                  const torch::Tensor& targets, const TranslatorConfig& cfg) {
  check_images(images, "generator batch");
  if (images.size(0) == 0) throw InvalidArgument("empty batch");
  GeneratorLossTerms t;
  const auto fake = g.forward(images, targets);
  const auto real_out = d.forward(images);
  const auto fake_out = d.forward(fake);
  t.adv = real_out.src.mean() - fake_out.src.mean();
  t.cls_fake = classification_loss(fake_out.cls_probs, targets);
  t.rec = (images - g.forward(fake, sources)).abs().mean();
  if (policy != nullptr) {
    torch::Tensor p;
    {
      torch::NoGradGuard no_grad;
      p = torch::softmax(policy->forward(images).logits, 1);
    }
    const auto q = torch::softmax(policy->forward(fake).logits, 1);
    t.policy_kl = adversarial_kl(p, q);
  } else {
    t.policy_kl = torch::zeros({}, images.options());
  }
  t.total = t.adv + cfg.lambda_cls * t.cls_fake + cfg.lambda_rec * t.rec - cfg.beta2 * t.policy_kl;
  return t;
}

DiscriminatorLossTerms discriminator_loss(Generator& g, Discriminator& d, const torch::Tensor& images,
                                          const torch::Tensor& labels, const torch::Tensor& targets,
                                          const torch::Tensor& alpha, const TranslatorConfig& cfg) {
  check_images(images, "discriminator batch");
  torch::Tensor fake;
  {
    torch::NoGradGuard no_grad;
    fake = g.forward(images, targets);
  }
  DiscriminatorLossTerms t;
  auto adv = adversarial_loss(d, images, fake, alpha, cfg.lambda_gp, /*create_graph=*/true);
  t.adv = adv.adv;
  t.grad_penalty = adv.grad_penalty;
  t.cls_real = classification_loss(d.forward(images).cls_probs, labels);
  t.total = -t.adv + cfg.lambda_cls * t.cls_real + t.grad_penalty;
  return t;
}

TranslatorPair::TranslatorPair(std::shared_ptr<Generator> generator, std::shared_ptr<Discriminator> discriminator,
                               TranslatorConfig config)
    : generator_(std::move(generator)), discriminator_(std::move(discriminator)), config_(config) {
  if (!generator_ || !discriminator_) throw InvalidArgument("translator needs a generator and a discriminator");
  if (generator_->n_domains() != config_.n_domains || discriminator_->n_domains() != config_.n_domains)
    throw ConfigError("generator, discriminator and config disagree on the number of domains");
  if (config_.n_critic < 1) throw ConfigError("n_critic must be >= 1");
  const auto adam = [&] {
    return torch::optim::AdamOptions(config_.lr).betas({config_.adam_beta1, config_.adam_beta2});
  };
  g_opt_ = std::make_unique<torch::optim::Adam>(generator_->parameters(), adam());
  d_opt_ = std::make_unique<torch::optim::Adam>(discriminator_->parameters(), adam());
}

TranslatorPair TranslatorPair::create(const TranslatorConfig& config, Rng& rng) {
  auto g = std::make_shared<ConvGenerator>(config.n_domains, config.generator_channels);
  auto d = std::make_shared<ConvDiscriminator>(config.n_domains, config.discriminator_channels);
  g->reset_parameters(rng);
  d->reset_parameters(rng);
  return TranslatorPair(g, d, config);
}

torch::Tensor TranslatorPair::translate(const torch::Tensor& images, const torch::Tensor& targets) const {
  check_labels(targets, config_.n_domains, "target");
  torch::NoGradGuard no_grad;
  return generator_->forward(images, targets);
}

GanLossReport TranslatorPair::generator_step(ActorCritic* policy, const torch::Tensor& images,
                                             const torch::Tensor& sources, Rng& rng) {
  const auto targets = sample_other_domains(sources, config_.n_domains, rng);
  const auto t = generator_loss(*generator_, *discriminator_, policy, images, sources, targets, config_);
  GanLossReport r;
  r.adv = scalar(t.adv);
  r.cls_fake = scalar(t.cls_fake);
  r.rec = scalar(t.rec);
  r.policy_kl = scalar(t.policy_kl);
  r.loss_g = scalar(t.total);
  if (!std::isfinite(r.loss_g)) {
    std::ostringstream os;
    os << "non-finite generator loss: adv=" << r.adv << " cls_fake=" << r.cls_fake << " rec=" << r.rec
       << " kl=" << r.policy_kl;
    throw NumericError(os.str());
  }
  apply_gradients(t.total, generator_->parameters(), *g_opt_);
  return r;
}

GanLossReport TranslatorPair::discriminator_step(const torch::Tensor& images, const torch::Tensor& labels,
                                                 Rng& rng) {
  const auto targets = sample_other_domains(labels, config_.n_domains, rng);
  const auto alpha = alpha_like(images, rng);
  const auto t = discriminator_loss(*generator_, *discriminator_, images, labels, targets, alpha, config_);
  GanLossReport r;
  r.adv = scalar(t.adv);
  r.cls_real = scalar(t.cls_real);
  r.grad_penalty = scalar(t.grad_penalty);
  r.loss_d = scalar(t.total);
  if (!std::isfinite(r.loss_d)) {
    std::ostringstream os;
    os << "non-finite discriminator loss: adv=" << r.adv << " cls_real=" << r.cls_real
       << " gp=" << r.grad_penalty;
    throw NumericError(os.str());
  }
  apply_gradients(t.total, discriminator_->parameters(), *d_opt_);
  return r;
}

void TranslatorPair::save(torch::serialize::OutputArchive& archive) const {
  torch::serialize::OutputArchive g, d, go, dop;
  generator_->save(g);
  discriminator_->save(d);
  g_opt_->save(go);
  d_opt_->save(dop);
  archive.write("generator", g);
  archive.write("discriminator", d);
  archive.write("generator_optimizer", go);
  archive.write("discriminator_optimizer", dop);
}

void TranslatorPair::load(torch::serialize::InputArchive& archive) {
  torch::serialize::InputArchive g, d, go, dop;
  archive.read("generator", g);
  archive.read("discriminator", d);
  archive.read("generator_optimizer", go);
  archive.read("discriminator_optimizer", dop);
  generator_->load(g);
  discriminator_->load(d);
  g_opt_->load(go);
  d_opt_->load(dop);
}

}  // namespace arpo
