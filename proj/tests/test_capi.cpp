#include <gtest/gtest.h>

#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <unistd.h>
#include <vector>

#include "arpo/arpo.h"

namespace fs = std::filesystem;

namespace {

const char* kTiny =
    "train.n_envs = 4\n"
    "train.rollout_length = 32\n"
    "train.total_timesteps = 256\n"
    "train.warmup_observations = 128\n"
    "train.gan_batch = 16\n"
    "train.eval_every = 1\n"
    "train.eval_episodes = 2\n"
    "train.final_eval_episodes = 4\n"
    "policy.minibatch_size = 64\n"
    "policy.channels = 4,8,8\n"
    "policy.hidden = 32\n"
    "gan.generator_channels = 4\n"
    "gan.discriminator_channels = 4\n"
    "gan.n_critic = 1\n";

std::string temp_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("arpo_capi_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p.string();
}

}  // namespace

TEST(CApi, StatusNamesAndVersion) {
  EXPECT_STREQ(arpo_status_name(ARPO_OK), "ARPO_OK");
  EXPECT_STREQ(arpo_status_name(ARPO_ERR_SPLIT), "ARPO_ERR_SPLIT");
  EXPECT_GT(std::string(arpo_version()).size(), 0u);
}

TEST(CApi, EnvResetStepAndErrors) {
  arpo_env* env = nullptr;
  ASSERT_EQ(arpo_env_create("", ARPO_SPLIT_TRAIN, &env), ARPO_OK);
  EXPECT_STREQ(arpo_last_error_message(), "");
  int32_t h = 0, w = 0, c = 0;
  ASSERT_EQ(arpo_env_observation_shape(env, &h, &w, &c), ARPO_OK);
  EXPECT_EQ(h, 32);
  EXPECT_EQ(w, 32);
  EXPECT_EQ(c, 3);
  std::vector<float> obs(static_cast<std::size_t>(h * w * c));
  ASSERT_EQ(arpo_env_reset(env, 1, 0, 0, obs.data(), obs.size()), ARPO_OK);
  for (float v : obs) {
    EXPECT_GE(v, 0.f);
    EXPECT_LE(v, 1.f);
  }
  double reward = 0;
  int32_t done = 0;
  ASSERT_EQ(arpo_env_step(env, 0, obs.data(), obs.size(), &reward, &done), ARPO_OK);
  EXPECT_EQ(done, 0);
  EXPECT_DOUBLE_EQ(reward, -0.01);

  // A test style in the train split.
  EXPECT_EQ(arpo_env_reset(env, 1, 20, 0, obs.data(), obs.size()), ARPO_ERR_SPLIT);
  EXPECT_NE(std::string(arpo_last_error_message()), "");
  EXPECT_EQ(arpo_env_step(env, 0, obs.data(), 10, &reward, &done), ARPO_ERR_SHAPE);
  EXPECT_EQ(arpo_env_reset(env, 1, 0, 0, obs.data(), 10), ARPO_ERR_SHAPE);
  EXPECT_EQ(arpo_env_reset(nullptr, 1, 0, 0, obs.data(), obs.size()), ARPO_ERR_INVALID_ARGUMENT);
  EXPECT_EQ(arpo_env_observation_shape(env, nullptr, nullptr, nullptr), ARPO_OK);
  arpo_env_destroy(env);
  arpo_env_destroy(nullptr);

  EXPECT_EQ(arpo_env_create("env.bogus = 1\n", ARPO_SPLIT_TEST, &env), ARPO_ERR_CONFIG);
  EXPECT_EQ(env, nullptr);
  EXPECT_EQ(arpo_env_create("", static_cast<arpo_split>(7), &env), ARPO_ERR_INVALID_ARGUMENT);
  EXPECT_EQ(arpo_env_create("", ARPO_SPLIT_TRAIN, nullptr), ARPO_ERR_INVALID_ARGUMENT);
}

TEST(CApi, ExportLevelsRespectsSplit) {
  char* text = nullptr;
  ASSERT_EQ(arpo_env_export_levels("", ARPO_SPLIT_TEST, 25, 3, &text), ARPO_OK);
  const auto j = nlohmann::json::parse(text);
  arpo_string_free(text);
  std::size_t n = 0;
  const auto& levels = j.is_array() ? j : j.at("levels");
  for (const auto& l : levels) {
    EXPECT_GE(l.at("style_id").get<int>(), 16);
    ++n;
  }
  EXPECT_EQ(n, 25u);
}

TEST(CApi, ConfigNormalize) {
  char* text = nullptr;
  ASSERT_EQ(arpo_config_normalize("train.beta1 = 2.5\n", &text), ARPO_OK);
  const std::string s = text;
  arpo_string_free(text);
  EXPECT_NE(s.find("train.beta1 = 2.5"), std::string::npos);
  EXPECT_NE(s.find("gan.n_critic = "), std::string::npos);
  EXPECT_EQ(arpo_config_normalize("train.nope = 1\n", &text), ARPO_ERR_CONFIG);
  EXPECT_NE(std::string(arpo_last_error_message()).find("train.nope"), std::string::npos);
}

TEST(CApi, RunLifecycle) {
  const auto dir = temp_dir("run");
  const std::string cfg = std::string(kTiny) + "train.algo = arpo\ntrain.seed = 2\n";
  arpo_run* run = nullptr;
  ASSERT_EQ(arpo_run_create(cfg.c_str(), dir.c_str(), &run), ARPO_OK) << arpo_last_error_message();
  ASSERT_EQ(arpo_run_train(run, 1), ARPO_OK) << arpo_last_error_message();
  int64_t it = 0, ts = 0;
  int32_t fin = 1;
  ASSERT_EQ(arpo_run_iteration(run, &it), ARPO_OK);
  ASSERT_EQ(arpo_run_timesteps(run, &ts), ARPO_OK);
  ASSERT_EQ(arpo_run_finished(run, &fin), ARPO_OK);
  EXPECT_EQ(it, 1);
  EXPECT_EQ(ts, 128);
  EXPECT_EQ(fin, 0);
  arpo_run_destroy(run);

  run = nullptr;
  ASSERT_EQ(arpo_run_open(dir.c_str(), 0, &run), ARPO_OK) << arpo_last_error_message();
  ASSERT_EQ(arpo_run_train(run, -1), ARPO_OK) << arpo_last_error_message();
  ASSERT_EQ(arpo_run_finished(run, &fin), ARPO_OK);
  EXPECT_EQ(fin, 1);
  // Training a finished run is a no-op.
  EXPECT_EQ(arpo_run_train(run, 1), ARPO_OK);
  ASSERT_EQ(arpo_run_iteration(run, &it), ARPO_OK);
  EXPECT_EQ(it, 2);
  double mean = 0, sd = -1;
  ASSERT_EQ(arpo_run_evaluate(run, ARPO_SPLIT_TEST, 4, 1, 0, &mean, &sd), ARPO_OK);
  EXPECT_GE(mean, -1.0);
  EXPECT_LE(mean, 1.0);
  EXPECT_GE(sd, 0.0);
  EXPECT_EQ(arpo_run_evaluate(run, ARPO_SPLIT_TEST, 0, 1, 0, &mean, &sd), ARPO_ERR_DOMAIN);
  arpo_run_destroy(run);

  const auto png = dir + "/grid2.png";
  EXPECT_EQ(arpo_translate_grid(dir.c_str(), png.c_str(), 1), ARPO_OK) << arpo_last_error_message();
  EXPECT_TRUE(fs::exists(png));
  EXPECT_EQ(arpo_translate_grid(dir.c_str(), png.c_str(), 0), ARPO_ERR_DOMAIN);

  // An existing run directory is not overwritten.
  EXPECT_EQ(arpo_run_create(cfg.c_str(), dir.c_str(), &run), ARPO_ERR_IO);
  EXPECT_EQ(arpo_run_open((dir + "/missing").c_str(), 1, &run), ARPO_ERR_IO);
  const char* one[] = {dir.c_str()};
  EXPECT_EQ(arpo_report(one, 1, (dir + "/report").c_str()), ARPO_ERR_USAGE);
  fs::remove_all(dir);
}

TEST(CApi, ClusterFit) {
  const auto dir = temp_dir("cluster");
  fs::create_directories(dir);
  int32_t k = 0;
  double purity = 0;
  const auto model = dir + "/m.json";
  ASSERT_EQ(arpo_cluster_fit("", 3, 400, 1, model.c_str(), nullptr, &k, &purity), ARPO_OK)
      << arpo_last_error_message();
  EXPECT_EQ(k, 3);
  EXPECT_GT(purity, 0.0);
  EXPECT_LE(purity, 1.0);
  EXPECT_TRUE(fs::exists(model));
  EXPECT_EQ(arpo_cluster_fit("", 0, 400, 1, model.c_str(), nullptr, &k, &purity), ARPO_ERR_DOMAIN);
  EXPECT_EQ(arpo_cluster_fit("", 3, 400, 1, nullptr, nullptr, &k, &purity), ARPO_ERR_INVALID_ARGUMENT);
  fs::remove_all(dir);
}
