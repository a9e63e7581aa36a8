#pragma once

#include <torch/torch.h>

#include <memory>

#include "core/policy.hpp"
#include "core/rng.hpp"

namespace arpo {

// Image-to-image translator G(x, c): images in [0, 1], target domain labels
// int64 [B]; output has the input's shape and stays in [0, 1].
class Generator : public torch::nn::Module {
 public:
  virtual torch::Tensor forward(const torch::Tensor& images, const torch::Tensor& targets) = 0;
  virtual int n_domains() const = 0;
};

struct CriticOutput {
  torch::Tensor src;        // realness score [B]
  torch::Tensor cls_probs;  // domain posterior [B, n_domains]
};

class Discriminator : public torch::nn::Module {
 public:
  virtual CriticOutput forward(const torch::Tensor& images) = 0;
  virtual int n_domains() const = 0;
};

// Encoder/decoder with the target label broadcast as extra input planes:
// conv 4x4/2 -> conv 3x3 -> transposed conv 4x4/2, added to the input in
// [-1, 1]. The last layer starts at zero, so a fresh generator is the
// identity map. Any H, W >= 2 is accepted.
class ConvGenerator : public Generator {
 public:
  ConvGenerator(int n_domains, int channels = 32);
  torch::Tensor forward(const torch::Tensor& images, const torch::Tensor& targets) override;
  int n_domains() const override { return n_domains_; }
  void reset_parameters(Rng& rng);

 private:
  int n_domains_;
  torch::nn::Conv2d enc_{nullptr}, mid_{nullptr};
  torch::nn::ConvTranspose2d dec_{nullptr};
};

// Two strided 4x4 convs with LeakyReLU; a 3x3 conv patch critic averaged over
// positions gives D_src, and a linear layer on pooled features gives D_cls.
class ConvDiscriminator : public Discriminator {
 public:
  ConvDiscriminator(int n_domains, int channels = 16);
  CriticOutput forward(const torch::Tensor& images) override;
  int n_domains() const override { return n_domains_; }
  void reset_parameters(Rng& rng);

 private:
  int n_domains_;
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, src_head_{nullptr};
  torch::nn::Linear cls_head_{nullptr};
};

struct TranslatorConfig {
  int n_domains = 3;
  double lambda_cls = 1.0;
  double lambda_rec = 10.0;
  double lambda_gp = 10.0;
  double beta2 = 20.0;
  double lr = 1e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  int n_critic = 5;
  int g_steps = 1;  // generator updates per policy iteration, each after n_critic D updates
  int generator_channels = 32;
  int discriminator_channels = 16;
};

struct GanLossReport {
  double adv = 0.0;
  double cls_real = 0.0;
  double cls_fake = 0.0;
  double rec = 0.0;
  double grad_penalty = 0.0;  // already multiplied by lambda_gp
  double policy_kl = 0.0;
  // Only the total of the step that produced the report is evaluated; the
  // other stays 0.
  double loss_d = 0.0;
  double loss_g = 0.0;
};

// Uniformly random domain different from each source label.
torch::Tensor sample_other_domains(const torch::Tensor& sources, int n_domains, Rng& rng);

struct AdversarialTerms {
  torch::Tensor adv;           // E[D_src(real)] - E[D_src(fake)]
  torch::Tensor grad_penalty;  // lambda_gp * E[(||grad D_src(x_hat)|| - 1)^2]
};

// x_hat = alpha * real + (1 - alpha) * fake per sample (alpha: [B] in [0, 1]).
// `create_graph` keeps the penalty differentiable w.r.t. D's parameters.
AdversarialTerms adversarial_loss(Discriminator& d, const torch::Tensor& real, const torch::Tensor& fake,
                                  const torch::Tensor& alpha, double lambda_gp, bool create_graph);

// Mean of -log(max(p[label], 1e-8)); throws on an empty batch.
torch::Tensor classification_loss(const torch::Tensor& cls_probs, const torch::Tensor& labels);

struct ClassificationTerms {
  torch::Tensor real;  // against the source labels of real images
  torch::Tensor fake;  // against the targets the fakes were generated for
};
ClassificationTerms classification_losses(Discriminator& d, const torch::Tensor& real,
                                          const torch::Tensor& real_labels, const torch::Tensor& fake,
                                          const torch::Tensor& fake_targets);

// Mean per-element L1 between x and G(G(x, target), source).
torch::Tensor reconstruction_loss(Generator& g, const torch::Tensor& images, const torch::Tensor& sources,
                                  const torch::Tensor& targets);

struct GeneratorLossTerms {
  torch::Tensor adv, cls_fake, rec, policy_kl, total;
};
// adv + lambda_cls * cls_fake + lambda_rec * rec - beta2 * KL(pi(.|x) || pi(.|G(x, c))).
// A null policy drops the KL term.
GeneratorLossTerms generator_loss(Generator& g, Discriminator& d, ActorCritic* policy,
                                  const torch::Tensor& images, const torch::Tensor& sources,
                                  const torch::Tensor& targets, const TranslatorConfig& cfg);

struct DiscriminatorLossTerms {
  torch::Tensor adv, cls_real, grad_penalty, total;
};
// -adv + lambda_cls * cls_real + grad_penalty, with fakes G(x, targets) detached.
DiscriminatorLossTerms discriminator_loss(Generator& g, Discriminator& d, const torch::Tensor& images,
                                          const torch::Tensor& labels, const torch::Tensor& targets,
                                          const torch::Tensor& alpha, const TranslatorConfig& cfg);

class TranslatorPair {
 public:
  TranslatorPair(std::shared_ptr<Generator> generator, std::shared_ptr<Discriminator> discriminator,
                 TranslatorConfig config);
  // Default conv networks initialised from `rng`.
  static TranslatorPair create(const TranslatorConfig& config, Rng& rng);

  // Inference only; throws DomainError for labels outside [0, n_domains).
  torch::Tensor translate(const torch::Tensor& images, const torch::Tensor& targets) const;

  // One update of G on L_G. `policy` is read but never modified; gradients
  // are taken w.r.t. generator parameters only.
  GanLossReport generator_step(ActorCritic* policy, const torch::Tensor& images,
                               const torch::Tensor& sources, Rng& rng);
  // One update of D on L_D.
  GanLossReport discriminator_step(const torch::Tensor& images, const torch::Tensor& labels, Rng& rng);

  Generator& generator() { return *generator_; }
  Discriminator& discriminator() { return *discriminator_; }
  const TranslatorConfig& config() const { return config_; }
  TranslatorConfig& mutable_config() { return config_; }

  void save(torch::serialize::OutputArchive& archive) const;
  void load(torch::serialize::InputArchive& archive);

 private:
  std::shared_ptr<Generator> generator_;
  std::shared_ptr<Discriminator> discriminator_;
  TranslatorConfig config_;
  std::unique_ptr<torch::optim::Adam> g_opt_;
  std::unique_ptr<torch::optim::Adam> d_opt_;
};

}  // namespace arpo
