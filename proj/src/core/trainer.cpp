#include "core/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>

#include "core/augment.hpp"
#include "core/errors.hpp"
#include "core/image_io.hpp"
#include "core/tensor_util.hpp"

namespace arpo {
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string hist_mask_name(const FeatureExtractorConfig& f, const EnvConfig& env) {
  if (f.hist_mask.empty()) return "all";
  if (f.hist_mask == distractor_mask(env)) return "distractor";
  if (f.hist_mask == state_mask(env)) return "state";
  return "custom";
}

std::uint64_t stream_seed(std::uint64_t root, const char* name) { return hash_combine(root, fnv1a(name)); }

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return kNaN;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  f << text;
  if (!f) throw IoError("write failed: " + path);
}

json vecenv_state_to_json(const VecEnv::State& s) {
  json envs = json::array();
  for (const auto& e : s.envs) {
    envs.push_back({{"layout_seed", e.level.layout_seed},
                    {"style_id", e.level.style_id},
                    {"dynamic_phase", e.level.dynamic_phase},
                    {"agent", {e.latent.agent.row, e.latent.agent.col}},
                    {"goal", {e.latent.goal.row, e.latent.goal.col}},
                    {"episode_step", e.episode_step},
                    {"done", e.done},
                    {"started", e.started}});
  }
  return {{"envs", envs}, {"running", s.running}, {"rng", s.rng}};
}

VecEnv::State vecenv_state_from_json(const json& j) {
  VecEnv::State s;
  for (const auto& e : j.at("envs")) {
    EnvSnapshot snap;
    snap.level.layout_seed = e.at("layout_seed").get<std::uint64_t>();
    snap.level.style_id = e.at("style_id").get<int>();
    snap.level.dynamic_phase = e.at("dynamic_phase").get<int>();
    snap.latent.agent = {e.at("agent")[0].get<int>(), e.at("agent")[1].get<int>()};
    snap.latent.goal = {e.at("goal")[0].get<int>(), e.at("goal")[1].get<int>()};
    snap.episode_step = e.at("episode_step").get<int>();
    snap.done = e.at("done").get<bool>();
    snap.started = e.at("started").get<bool>();
    s.envs.push_back(snap);
  }
  s.running = j.at("running").get<std::vector<double>>();
  s.rng = j.at("rng").get<std::string>();
  return s;
}

void write_string(torch::serialize::OutputArchive& ar, const std::string& key, const std::string& value) {
  ar.write(key, c10::IValue(value));
}

std::string read_string(torch::serialize::InputArchive& ar, const std::string& key) {
  c10::IValue v;
  ar.read(key, v);
  return v.toStringRef();
}

void write_int(torch::serialize::OutputArchive& ar, const std::string& key, std::int64_t value) {
  ar.write(key, c10::IValue(value));
}

std::int64_t read_int(torch::serialize::InputArchive& ar, const std::string& key) {
  c10::IValue v;
  ar.read(key, v);
  return v.toInt();
}

}  // namespace

const char* algo_name(Algo a) {
  switch (a) {
    case Algo::kArpo: return "arpo";
    case Algo::kPpo: return "ppo";
    case Algo::kPpoCutout: return "ppo_cutout";
  }
  return "?";
}

Algo parse_algo(const std::string& s) {
  if (s == "arpo") return Algo::kArpo;
  if (s == "ppo") return Algo::kPpo;
  if (s == "ppo_cutout") return Algo::kPpoCutout;
  throw ConfigError("unknown algorithm '" + s + "' (expected arpo, ppo or ppo_cutout)");
}

std::int64_t TrainConfig::total_iterations() const {
  const auto per = steps_per_iteration();
  return (total_timesteps + per - 1) / per;
}

void TrainConfig::validate() const {
  env.validate();
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(total_timesteps >= 1, "train.total_timesteps must be >= 1");
  require(n_envs >= 1, "train.n_envs must be >= 1");
  require(rollout_length >= 1, "train.rollout_length must be >= 1");
  require(gamma > 0.0 && gamma <= 1.0, "train.gamma must lie in (0, 1]");
  require(lam >= 0.0 && lam <= 1.0, "train.lam must lie in [0, 1]");
  require(beta1 >= 0.0 && std::isfinite(beta1), "train.beta1 must be a finite value >= 0");
  require(beta2 >= 0.0 && std::isfinite(beta2), "train.beta2 must be a finite value >= 0");
  require(n_clusters >= 1, "train.n_clusters must be >= 1");
  require(warmup_observations >= n_clusters, "train.warmup_observations must be >= train.n_clusters");
  require(gan_batch >= 1, "train.gan_batch must be >= 1");
  require(eval_every >= 0 && checkpoint_every >= 0, "eval/checkpoint intervals must be >= 0");
  require(eval_episodes >= 1 && final_eval_episodes >= 1, "evaluation episode counts must be >= 1");
  require(policy.lr > 0.0, "policy.lr must be > 0");
  require(policy.n_sgd_iter >= 1 && policy.minibatch_size >= 1, "policy epochs and minibatch must be >= 1");
  require(gan.lr > 0.0 && gan.n_critic >= 1, "gan.lr must be > 0 and gan.n_critic >= 1");
  require(gan.g_steps >= 1, "gan.g_steps must be >= 1");
  require(features.image_size == env.image_size, "cluster features must use the env image size");
  require(net.image_size == env.image_size, "policy network must use the env image size");
}

TrainConfig TrainConfig::from_kv(const KvConfig& kv) {
  TrainConfig c;
  c.env = EnvConfig::from_kv(kv);
  c.algo = parse_algo(kv.get_string("train.algo", algo_name(c.algo)));
  c.seed = static_cast<std::uint64_t>(kv.get_int("train.seed", static_cast<std::int64_t>(c.seed)));
  c.total_timesteps = kv.get_int("train.total_timesteps", c.total_timesteps);
  c.n_envs = static_cast<int>(kv.get_int("train.n_envs", c.n_envs));
  c.rollout_length = static_cast<int>(kv.get_int("train.rollout_length", c.rollout_length));
  c.gamma = kv.get_double("train.gamma", c.gamma);
  c.lam = kv.get_double("train.lam", c.lam);
  c.beta1 = kv.get_double("train.beta1", c.beta1);
  c.beta2 = kv.get_double("train.beta2", c.beta2);
  c.translate = kv.get_bool("train.translate", c.translate);
  c.n_clusters = static_cast<int>(kv.get_int("train.n_clusters", c.n_clusters));
  c.warmup_observations = static_cast<int>(kv.get_int("train.warmup_observations", c.warmup_observations));
  c.gan_batch = static_cast<int>(kv.get_int("train.gan_batch", c.gan_batch));
  c.eval_every = static_cast<int>(kv.get_int("train.eval_every", c.eval_every));
  c.eval_episodes = static_cast<int>(kv.get_int("train.eval_episodes", c.eval_episodes));
  c.final_eval_episodes = static_cast<int>(kv.get_int("train.final_eval_episodes", c.final_eval_episodes));
  c.eval_greedy = kv.get_bool("train.eval_greedy", c.eval_greedy);
  c.checkpoint_every = static_cast<int>(kv.get_int("train.checkpoint_every", c.checkpoint_every));
  c.mask_distractors = kv.get_bool("train.mask_distractors", c.mask_distractors);

  auto& p = c.policy;
  p.lr = kv.get_double("policy.lr", p.lr);
  p.clip = kv.get_double("policy.clip", p.clip);
  p.clip_surrogate = kv.get_bool("policy.clip_surrogate", p.clip_surrogate);
  p.vf_clip = kv.get_double("policy.vf_clip", p.vf_clip);
  p.vf_coeff = kv.get_double("policy.vf_coeff", p.vf_coeff);
  p.entropy_coeff = kv.get_double("policy.entropy_coeff", p.entropy_coeff);
  p.grad_clip = kv.get_double("policy.grad_clip", p.grad_clip);
  p.n_sgd_iter = static_cast<int>(kv.get_int("policy.n_sgd_iter", p.n_sgd_iter));
  p.minibatch_size = static_cast<int>(kv.get_int("policy.minibatch_size", p.minibatch_size));
  p.normalize_advantages = kv.get_bool("policy.normalize_advantages", p.normalize_advantages);
  const auto ch = kv.get_int_list("policy.channels", {c.net.channels[0], c.net.channels[1], c.net.channels[2]});
  if (ch.size() != 3) throw ConfigError("policy.channels needs exactly three values");
  for (int v : ch) {
    if (v < 1) throw ConfigError("policy.channels must be positive");
  }
  c.net.channels = {ch[0], ch[1], ch[2]};
  c.net.hidden = static_cast<int>(kv.get_int("policy.hidden", c.net.hidden));
  c.net.image_size = c.env.image_size;
  c.net.n_actions = kNumActions;

  auto& g = c.gan;
  g.lr = kv.get_double("gan.lr", g.lr);
  g.adam_beta1 = kv.get_double("gan.adam_beta1", g.adam_beta1);
  g.adam_beta2 = kv.get_double("gan.adam_beta2", g.adam_beta2);
  g.lambda_cls = kv.get_double("gan.lambda_cls", g.lambda_cls);
  g.lambda_rec = kv.get_double("gan.lambda_rec", g.lambda_rec);
  g.lambda_gp = kv.get_double("gan.lambda_gp", g.lambda_gp);
  g.n_critic = static_cast<int>(kv.get_int("gan.n_critic", g.n_critic));
  g.g_steps = static_cast<int>(kv.get_int("gan.g_steps", g.g_steps));
  g.generator_channels = static_cast<int>(kv.get_int("gan.generator_channels", g.generator_channels));
  g.discriminator_channels = static_cast<int>(kv.get_int("gan.discriminator_channels", g.discriminator_channels));

  auto& f = c.features;
  f.image_size = c.env.image_size;
  f.projection_dims = static_cast<int>(kv.get_int("cluster.projection_dims", f.projection_dims));
  f.n_filters = static_cast<int>(kv.get_int("cluster.n_filters", f.n_filters));
  f.patch = static_cast<int>(kv.get_int("cluster.patch", f.patch));
  f.hist_bins = static_cast<int>(kv.get_int("cluster.hist_bins", f.hist_bins));
  f.seed = static_cast<std::uint64_t>(kv.get_int("cluster.feature_seed", static_cast<std::int64_t>(f.seed)));
  const auto mask = kv.get_string("cluster.hist_mask", "all");
  if (mask == "all") {
    f.hist_mask.clear();
  } else if (mask == "distractor") {
    f.hist_mask = distractor_mask(c.env);
  } else if (mask == "state") {
    f.hist_mask = state_mask(c.env);
  } else {
    throw ConfigError("cluster.hist_mask must be all, distractor or state");
  }

  const auto unknown = kv.unconsumed_keys();
  if (!unknown.empty()) {
    std::string msg = "unknown config key(s):";
    for (const auto& k : unknown) msg += " " + k;
    throw ConfigError(msg);
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::parse(const std::string& text) { return from_kv(KvConfig::parse(text)); }

KvConfig TrainConfig::to_kv() const {
  KvConfig kv;
  env.to_kv(kv);
  kv.set("train.algo", algo_name(algo));
  kv.set("train.seed", std::to_string(seed));
  kv.set("train.total_timesteps", std::to_string(total_timesteps));
  kv.set("train.n_envs", std::to_string(n_envs));
  kv.set("train.rollout_length", std::to_string(rollout_length));
  kv.set("train.gamma", format_double(gamma));
  kv.set("train.lam", format_double(lam));
  kv.set("train.beta1", format_double(beta1));
  kv.set("train.beta2", format_double(beta2));
  kv.set("train.translate", translate ? "true" : "false");
  kv.set("train.n_clusters", std::to_string(n_clusters));
  kv.set("train.warmup_observations", std::to_string(warmup_observations));
  kv.set("train.gan_batch", std::to_string(gan_batch));
  kv.set("train.eval_every", std::to_string(eval_every));
  kv.set("train.eval_episodes", std::to_string(eval_episodes));
  kv.set("train.final_eval_episodes", std::to_string(final_eval_episodes));
  kv.set("train.eval_greedy", eval_greedy ? "true" : "false");
  kv.set("train.checkpoint_every", std::to_string(checkpoint_every));
  kv.set("train.mask_distractors", mask_distractors ? "true" : "false");
  kv.set("policy.lr", format_double(policy.lr));
  kv.set("policy.clip", format_double(policy.clip));
  kv.set("policy.clip_surrogate", policy.clip_surrogate ? "true" : "false");
  kv.set("policy.vf_clip", format_double(policy.vf_clip));
  kv.set("policy.vf_coeff", format_double(policy.vf_coeff));
  kv.set("policy.entropy_coeff", format_double(policy.entropy_coeff));
  kv.set("policy.grad_clip", format_double(policy.grad_clip));
  kv.set("policy.n_sgd_iter", std::to_string(policy.n_sgd_iter));
  kv.set("policy.minibatch_size", std::to_string(policy.minibatch_size));
  kv.set("policy.normalize_advantages", policy.normalize_advantages ? "true" : "false");
  kv.set("policy.channels", std::to_string(net.channels[0]) + "," + std::to_string(net.channels[1]) + "," +
                                std::to_string(net.channels[2]));
  kv.set("policy.hidden", std::to_string(net.hidden));
  kv.set("gan.lr", format_double(gan.lr));
  kv.set("gan.adam_beta1", format_double(gan.adam_beta1));
  kv.set("gan.adam_beta2", format_double(gan.adam_beta2));
  kv.set("gan.lambda_cls", format_double(gan.lambda_cls));
  kv.set("gan.lambda_rec", format_double(gan.lambda_rec));
  kv.set("gan.lambda_gp", format_double(gan.lambda_gp));
  kv.set("gan.n_critic", std::to_string(gan.n_critic));
  kv.set("gan.g_steps", std::to_string(gan.g_steps));
  kv.set("gan.generator_channels", std::to_string(gan.generator_channels));
  kv.set("gan.discriminator_channels", std::to_string(gan.discriminator_channels));
  kv.set("cluster.projection_dims", std::to_string(features.projection_dims));
  kv.set("cluster.n_filters", std::to_string(features.n_filters));
  kv.set("cluster.patch", std::to_string(features.patch));
  kv.set("cluster.hist_bins", std::to_string(features.hist_bins));
  kv.set("cluster.feature_seed", std::to_string(features.seed));
  const auto mask = hist_mask_name(features, env);
  if (mask == "custom") throw ConfigError("a custom cluster histogram mask cannot be serialized");
  kv.set("cluster.hist_mask", mask);
  return kv;
}

EvalResult evaluate(const ActingPolicy& policy, const EnvConfig& env, Split split, int n_episodes, bool greedy,
                    std::uint64_t seed) {
  if (n_episodes < 1) throw InvalidArgument("n_episodes must be >= 1");
  const LevelSampler sampler(env, split);
  Rng level_rng = named_stream(seed, "levels");
  Rng action_rng = named_stream(seed, "actions");
  EvalResult result;
  std::vector<DistractorWorld> worlds;
  std::vector<Observation> obs;
  for (int i = 0; i < n_episodes; ++i) {
    result.levels.push_back(sampler.sample(level_rng));
    worlds.emplace_back(env, split);
    obs.push_back(worlds.back().reset(result.levels.back()));
  }
  result.returns.assign(static_cast<std::size_t>(n_episodes), 0.0);
  std::vector<int> active(static_cast<std::size_t>(n_episodes));
  std::iota(active.begin(), active.end(), 0);
  const auto a = static_cast<std::size_t>(policy.n_actions());
  std::vector<double> probs, values;
  std::vector<Observation> batch;
  while (!active.empty()) {
    batch.clear();
    for (int i : active) batch.push_back(obs[static_cast<std::size_t>(i)]);
    probs.assign(batch.size() * a, 0.0);
    values.assign(batch.size(), 0.0);
    policy.act(batch, probs, values);
    std::vector<int> still;
    for (std::size_t k = 0; k < active.size(); ++k) {
      const std::span<const double> row(probs.data() + k * a, a);
      int action;
      if (greedy) {
        action = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      } else {
        action = sample_categorical(row, action_rng);
      }
      const auto i = static_cast<std::size_t>(active[k]);
      auto r = worlds[i].step(action);
      result.returns[i] += r.reward;
      if (!r.done) {
        obs[i] = std::move(r.observation);
        still.push_back(active[k]);
      }
    }
    active = std::move(still);
  }
  result.mean = mean_of(result.returns);
  double var = 0.0;
  for (double r : result.returns) var += (r - result.mean) * (r - result.mean);
  result.std = std::sqrt(var / static_cast<double>(result.returns.size()));
  return result;
}

std::string metrics_header() {
  return "iteration,timesteps,train_return,eval_train_return,test_return,adv_kl,surrogate,value_loss,entropy,"
         "loss_d,loss_g,gan_adv,gan_cls_real,gan_cls_fake,gan_rec,gan_gp,gan_policy_kl,n_domains";
}

std::string metrics_row(const IterationMetrics& m) {
  std::string s = std::to_string(m.iteration) + "," + std::to_string(m.timesteps);
  for (double v : {m.train_return, m.eval_train_return, m.test_return, m.adv_kl, m.surrogate, m.value_loss,
                   m.entropy, m.loss_d, m.loss_g, m.gan_adv, m.gan_cls_real, m.gan_cls_fake, m.gan_rec, m.gan_gp,
                   m.gan_policy_kl}) {
    s += "," + format_double(v);
  }
  s += "," + std::to_string(m.n_domains);
  return s;
}

IterationMetrics parse_metrics_row(const std::string& line) {
  std::vector<std::string> f;
  std::stringstream ss(line);
  std::string item;
  while (std::getline(ss, item, ',')) f.push_back(item);
  if (f.size() != 18) throw IoError("metrics row has " + std::to_string(f.size()) + " fields, expected 18");
  IterationMetrics m;
  try {
    m.iteration = std::stoll(f[0]);
    m.timesteps = std::stoll(f[1]);
    double* dst[] = {&m.train_return, &m.eval_train_return, &m.test_return, &m.adv_kl, &m.surrogate,
                     &m.value_loss, &m.entropy, &m.loss_d, &m.loss_g, &m.gan_adv, &m.gan_cls_real,
                     &m.gan_cls_fake, &m.gan_rec, &m.gan_gp, &m.gan_policy_kl};
    for (std::size_t i = 0; i < 15; ++i) *dst[i] = std::stod(f[i + 2]);
    m.n_domains = std::stoi(f[17]);
  } catch (const std::logic_error&) {
    throw IoError("malformed metrics row: " + line);
  }
  return m;
}

std::vector<IterationMetrics> read_metrics(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path);
  std::string line;
  if (!std::getline(f, line) || line != metrics_header()) throw IoError("unexpected metrics header in " + path);
  std::vector<IterationMetrics> out;
  while (std::getline(f, line)) {
    if (!line.empty()) out.push_back(parse_metrics_row(line));
  }
  return out;
}

std::string checkpoint_path(const std::string& run_dir) {
  return (fs::path(run_dir) / "checkpoints" / "latest.pt").string();
}

Trainer::Trainer(TrainConfig config, std::string run_dir) : config_(std::move(config)), run_dir_(std::move(run_dir)) {
  config_.validate();
  auto net = std::make_shared<ConvActorCritic>(config_.net);
  if (config_.mask_distractors) {
    net->set_input_mask(mask_to_tensor(state_mask(config_.env), config_.env.image_size, config_.env.image_size));
  }
  Rng init = named_stream(config_.seed, "policy-init");
  net->reset_parameters(init);
  policy_ = std::make_unique<PolicyModel>(net, config_.policy);
  envs_ = std::make_unique<VecEnv>(config_.env, Split::kTrain, config_.n_envs, stream_seed(config_.seed, "env"));
  action_rng_ = named_stream(config_.seed, "action");
  shuffle_rng_ = named_stream(config_.seed, "minibatch-shuffle");
  gan_rng_ = named_stream(config_.seed, "gan");
  augment_rng_ = named_stream(config_.seed, "augment");

  if (run_dir_.empty()) return;
  const fs::path dir(run_dir_);
  if (fs::exists(dir / "metrics.csv")) {
    throw IoError("run directory already holds a run: " + run_dir_ + " (resume it instead)");
  }
  std::error_code ec;
  fs::create_directories(dir / "checkpoints", ec);
  if (ec) throw IoError("cannot create run directory " + run_dir_ + ": " + ec.message());
  write_file((dir / "config.txt").string(), config_.to_kv().to_string());
  json seeds = {{"root_seed", config_.seed}, {"streams", json::object()}};
  for (const char* name : {"policy-init", "env", "action", "minibatch-shuffle", "gan", "gan-init", "augment",
                           "cluster", "eval", "final-eval"}) {
    seeds["streams"][name] = stream_seed(config_.seed, name);
  }
  write_file((dir / "seed.json").string(), seeds.dump(2) + "\n");
  write_file((dir / "metrics.csv").string(), metrics_header() + "\n");
}

Trainer::~Trainer() = default;

std::unique_ptr<Trainer> Trainer::open_readonly(const std::string& run_dir) {
  const fs::path dir(run_dir);
  const auto config = TrainConfig::parse(read_file((dir / "config.txt").string()));
  auto t = std::make_unique<Trainer>(config, std::string());
  const auto ckpt = checkpoint_path(run_dir);
  if (fs::exists(ckpt)) t->load_checkpoint(ckpt);
  return t;
}

std::unique_ptr<Trainer> Trainer::open(const std::string& run_dir) {
  const fs::path dir(run_dir);
  auto t = open_readonly(run_dir);
  t->run_dir_ = run_dir;
  auto rows = fs::exists(dir / "metrics.csv") ? read_metrics((dir / "metrics.csv").string())
                                              : std::vector<IterationMetrics>{};
  if (static_cast<std::int64_t>(rows.size()) < t->iteration_) {
    throw IoError("metrics.csv has fewer rows than the checkpoint's iteration count");
  }
  rows.resize(static_cast<std::size_t>(t->iteration_));
  t->history_ = rows;
  std::string text = metrics_header() + "\n";
  for (const auto& m : rows) text += metrics_row(m) + "\n";
  write_file((dir / "metrics.csv").string(), text);
  return t;
}

void Trainer::warn(const std::string& message) {
  warnings_.push_back(message);
  std::cerr << "warning: " << message << "\n";
  if (!run_dir_.empty()) {
    std::ofstream f((fs::path(run_dir_) / "warnings.log").string(), std::ios::app);
    f << "iteration " << iteration_ << ": " << message << "\n";
  }
}

void Trainer::create_translator() {
  TranslatorConfig g = config_.gan;
  g.n_domains = cluster_->n_clusters();
  g.beta2 = config_.beta2;
  Rng init = named_stream(config_.seed, "gan-init");
  translator_ = std::make_unique<TranslatorPair>(TranslatorPair::create(g, init));
}

void Trainer::maybe_fit_clusters(const RolloutBatch& batch) {
  if (cluster_) return;
  for (const auto& img : batch.observations) {
    if (static_cast<int>(warmup_.size()) >= config_.warmup_observations) break;
    warmup_.push_back(img);
  }
  if (static_cast<int>(warmup_.size()) < config_.warmup_observations) return;
  auto fit = fit_cluster_model(warmup_, config_.features, config_.n_clusters, stream_seed(config_.seed, "cluster"));
  for (const auto& w : fit.report.warnings) warn("clustering: " + w);
  cluster_ = std::move(fit.model);
  warmup_.clear();
  warmup_.shrink_to_fit();
  if (cluster_->n_clusters() < 2) {
    warn("only one style domain found; translation disabled for this run");
    return;
  }
  create_translator();
}

IterationMetrics Trainer::run_iteration() {
  if (finished()) throw UsageError("training budget already spent");
  IterationMetrics m;
  RolloutBatch batch = collect(*policy_, *envs_, config_.rollout_length, action_rng_);
  compute_advantages(batch, config_.gamma, config_.lam);
  m.train_return = mean_of(batch.episode_returns);
  m.adv_kl = kNaN;
  for (double* v : {&m.loss_d, &m.loss_g, &m.gan_adv, &m.gan_cls_real, &m.gan_cls_fake, &m.gan_rec, &m.gan_gp,
                    &m.gan_policy_kl}) {
    *v = kNaN;
  }

  const auto obs = images_to_tensor(std::span<const Image>(batch.observations), policy_->dtype());
  torch::Tensor rl_obs, translated, labels;
  if (config_.algo == Algo::kArpo) {
    maybe_fit_clusters(batch);
    if (translator_) {
      const auto ids = assign_clusters(*cluster_, batch.observations);
      labels = torch::tensor(std::vector<std::int64_t>(ids.begin(), ids.end()), torch::kInt64);
      if (config_.translate) {
        const auto targets = sample_other_domains(labels, translator_->config().n_domains, gan_rng_);
        std::vector<torch::Tensor> parts;
        constexpr long kChunk = 512;
        for (long s = 0; s < obs.size(0); s += kChunk) {
          const long len = std::min<long>(kChunk, obs.size(0) - s);
          parts.push_back(translator_->translate(obs.narrow(0, s, len), targets.narrow(0, s, len)));
        }
        translated = torch::cat(parts, 0);
      }
    }
  } else if (config_.algo == Algo::kPpoCutout) {
    rl_obs = cutout_color_augment(obs, augment_rng_);
  }

  const auto gen_hash = translator_ ? parameter_hash(translator_->generator().parameters()) : 0;
  const auto report = policy_->policy_step(batch, obs, rl_obs, translated, config_.beta1, shuffle_rng_);
  if (translator_ && parameter_hash(translator_->generator().parameters()) != gen_hash) {
    throw std::logic_error("policy update modified generator parameters");
  }
  m.surrogate = report.surrogate;
  m.value_loss = report.value_loss;
  m.entropy = report.entropy;
  if (translated.defined()) m.adv_kl = report.adv_kl;

  if (translator_) {
    const auto pol_hash = parameter_hash(policy_->parameters());
    const auto n = static_cast<std::uint64_t>(obs.size(0));
    auto sample = [&] {
      std::vector<std::int64_t> idx(static_cast<std::size_t>(config_.gan_batch));
      for (auto& i : idx) i = static_cast<std::int64_t>(uniform_index(gan_rng_, n));
      return torch::tensor(idx, torch::kInt64);
    };
    GanLossReport d_sum, g_sum;
    const int n_critic = translator_->config().n_critic;
    const int g_steps = translator_->config().g_steps;
    for (int s = 0; s < g_steps; ++s) {
      for (int k = 0; k < n_critic; ++k) {
        const auto idx = sample();
        const auto r =
            translator_->discriminator_step(obs.index_select(0, idx), labels.index_select(0, idx), gan_rng_);
        const double w = 1.0 / (n_critic * g_steps);
        d_sum.loss_d += r.loss_d * w;
        d_sum.cls_real += r.cls_real * w;
        d_sum.grad_penalty += r.grad_penalty * w;
      }
      const auto idx = sample();
      const auto g = translator_->generator_step(&policy_->net(), obs.index_select(0, idx),
                                                 labels.index_select(0, idx), gan_rng_);
      const double w = 1.0 / g_steps;
      g_sum.loss_g += g.loss_g * w;
      g_sum.adv += g.adv * w;
      g_sum.cls_fake += g.cls_fake * w;
      g_sum.rec += g.rec * w;
      g_sum.policy_kl += g.policy_kl * w;
    }
    if (parameter_hash(policy_->parameters()) != pol_hash) {
      throw std::logic_error("translator update modified policy parameters");
    }
    m.loss_d = d_sum.loss_d;
    m.gan_cls_real = d_sum.cls_real;
    m.gan_gp = d_sum.grad_penalty;
    m.loss_g = g_sum.loss_g;
    m.gan_adv = g_sum.adv;
    m.gan_cls_fake = g_sum.cls_fake;
    m.gan_rec = g_sum.rec;
    m.gan_policy_kl = g_sum.policy_kl;
  }

  ++iteration_;
  timesteps_ += static_cast<std::int64_t>(batch.size());
  m.iteration = iteration_;
  m.timesteps = timesteps_;
  m.n_domains = cluster_ ? cluster_->n_clusters() : 0;
  m.eval_train_return = kNaN;
  m.test_return = kNaN;
  if (config_.eval_every > 0 && iteration_ % config_.eval_every == 0) {
    const auto seed = hash_combine(stream_seed(config_.seed, "eval"), static_cast<std::uint64_t>(iteration_));
    m.eval_train_return = evaluate(Split::kTrain, config_.eval_episodes, config_.eval_greedy, seed).mean;
    m.test_return = evaluate(Split::kTest, config_.eval_episodes, config_.eval_greedy, seed).mean;
  }
  append_metrics(m);
  return m;
}

void Trainer::append_metrics(const IterationMetrics& m) {
  history_.push_back(m);
  if (run_dir_.empty()) return;
  std::ofstream f((fs::path(run_dir_) / "metrics.csv").string(), std::ios::app);
  if (!f) throw IoError("cannot append to metrics.csv in " + run_dir_);
  f << metrics_row(m) << "\n";
}

void Trainer::train(std::int64_t max_iterations) {
  std::int64_t done = 0;
  while (!finished() && (max_iterations < 0 || done < max_iterations)) {
    try {
      run_iteration();
    } catch (const NumericError&) {
      if (!run_dir_.empty()) save_checkpoint((fs::path(run_dir_) / "checkpoints" / "abort.pt").string());
      throw;
    }
    ++done;
    if (!run_dir_.empty() && config_.checkpoint_every > 0 && iteration_ % config_.checkpoint_every == 0 &&
        !finished()) {
      save_checkpoint(checkpoint_path(run_dir_));
    }
  }
  if (finished() && !run_dir_.empty()) {
    save_checkpoint(checkpoint_path(run_dir_));
    write_final_eval();
  }
}

EvalResult Trainer::evaluate(Split split, int n_episodes, bool greedy, std::uint64_t seed) const {
  return arpo::evaluate(*policy_, config_.env, split, n_episodes, greedy, seed);
}

void Trainer::write_final_eval() {
  const auto seed = stream_seed(config_.seed, "final-eval");
  const auto tr = evaluate(Split::kTrain, config_.final_eval_episodes, config_.eval_greedy, seed);
  const auto te = evaluate(Split::kTest, config_.final_eval_episodes, config_.eval_greedy, seed);
  json j = {{"algo", algo_name(config_.algo)},
            {"seed", config_.seed},
            {"iterations", iteration_},
            {"timesteps", timesteps_},
            {"episodes", config_.final_eval_episodes},
            {"greedy", config_.eval_greedy},
            {"train", {{"mean", tr.mean}, {"std", tr.std}}},
            {"test", {{"mean", te.mean}, {"std", te.std}}},
            {"gap", tr.mean - te.mean},
            {"n_domains", cluster_ ? cluster_->n_clusters() : 0}};
  write_file((fs::path(run_dir_) / "final_eval.json").string(), j.dump(2) + "\n");
  if (translator_) write_translation_grid((fs::path(run_dir_) / "translation_grid.png").string());
}

void Trainer::save_checkpoint(const std::string& path) const {
  torch::serialize::OutputArchive ar;
  write_string(ar, "config", config_.to_kv().to_string());
  write_int(ar, "iteration", iteration_);
  write_int(ar, "timesteps", timesteps_);
  torch::serialize::OutputArchive pol;
  policy_->save(pol);
  ar.write("policy", pol);
  write_string(ar, "cluster", cluster_ ? cluster_model_to_json(*cluster_) : std::string());
  write_int(ar, "has_translator", translator_ ? 1 : 0);
  if (translator_) {
    torch::serialize::OutputArchive tr;
    translator_->save(tr);
    ar.write("translator", tr);
  }
  write_int(ar, "warmup_count", static_cast<std::int64_t>(warmup_.size()));
  if (!warmup_.empty()) ar.write("warmup", images_to_tensor(std::span<const Image>(warmup_)));
  write_string(ar, "envs", vecenv_state_to_json(envs_->state()).dump());
  write_string(ar, "rng.action", rng_state(action_rng_));
  write_string(ar, "rng.shuffle", rng_state(shuffle_rng_));
  write_string(ar, "rng.gan", rng_state(gan_rng_));
  write_string(ar, "rng.augment", rng_state(augment_rng_));
  const auto tmp = path + ".tmp";
  fs::create_directories(fs::path(path).parent_path());
  ar.save_to(tmp);
  fs::rename(tmp, path);
}

void Trainer::load_checkpoint(const std::string& path) {
  torch::serialize::InputArchive ar;
  try {
    ar.load_from(path);
  } catch (const c10::Error& e) {
    throw IoError("cannot load checkpoint " + path + ": " + e.what_without_backtrace());
  }
  const auto saved = TrainConfig::parse(read_string(ar, "config"));
  if (saved.to_kv().to_string() != config_.to_kv().to_string()) {
    throw ConfigError("checkpoint was written by a different configuration");
  }
  iteration_ = read_int(ar, "iteration");
  timesteps_ = read_int(ar, "timesteps");
  torch::serialize::InputArchive pol;
  ar.read("policy", pol);
  policy_->load(pol);
  const auto cluster = read_string(ar, "cluster");
  cluster_.reset();
  translator_.reset();
  if (!cluster.empty()) cluster_ = cluster_model_from_json(cluster);
  if (read_int(ar, "has_translator") != 0) {
    if (!cluster_) throw IoError("checkpoint has a translator but no cluster model");
    create_translator();
    torch::serialize::InputArchive tr;
    ar.read("translator", tr);
    translator_->load(tr);
  }
  warmup_.clear();
  if (read_int(ar, "warmup_count") > 0) {
    torch::Tensor w;
    ar.read("warmup", w);
    warmup_ = tensor_to_images(w);
  }
  envs_->restore(vecenv_state_from_json(json::parse(read_string(ar, "envs"))));
  restore_rng_state(action_rng_, read_string(ar, "rng.action"));
  restore_rng_state(shuffle_rng_, read_string(ar, "rng.shuffle"));
  restore_rng_state(gan_rng_, read_string(ar, "rng.gan"));
  restore_rng_state(augment_rng_, read_string(ar, "rng.augment"));
}

void Trainer::write_translation_grid(const std::string& path, int per_domain) const {
  if (!translator_ || !cluster_) throw UsageError("this run has no translator");
  const int k = cluster_->n_clusters();
  const LevelSampler sampler(config_.env, Split::kTrain);
  Rng rng = named_stream(config_.seed, "translation-grid");
  std::vector<std::vector<Image>> by_domain(static_cast<std::size_t>(k));
  for (int tries = 0; tries < 400; ++tries) {
    DistractorWorld world(config_.env, Split::kTrain);
    auto img = world.reset(sampler.sample(rng)).image;
    const int d = assign_cluster(*cluster_, img);
    auto& bucket = by_domain[static_cast<std::size_t>(d)];
    if (static_cast<int>(bucket.size()) < per_domain) bucket.push_back(std::move(img));
    bool full = true;
    for (const auto& b : by_domain) full = full && static_cast<int>(b.size()) >= per_domain;
    if (full) break;
  }
  std::vector<std::vector<Image>> rows;
  for (const auto& bucket : by_domain) {
    for (const auto& img : bucket) {
      std::vector<Image> row{img};
      const auto x = images_to_tensor(std::span<const Image>(&img, 1)).repeat({k, 1, 1, 1});
      const auto targets = torch::arange(k, torch::kInt64);
      auto out = tensor_to_images(translator_->translate(x.to(torch::kFloat32), targets));
      for (auto& o : out) row.push_back(std::move(o));
      rows.push_back(std::move(row));
    }
  }
  if (rows.empty()) throw UsageError("no source images found for the translation grid");
  write_png(montage(rows, 3, 2), path);
}

}  // namespace arpo
