#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>

#include "core/errors.hpp"
#include "core/rollout.hpp"
#include "core/style_cluster.hpp"
#include "test_util.hpp"

using namespace arpo;

namespace {

// Fraction of points whose cluster's majority label equals their own label.
double purity(const std::vector<int>& clusters, const std::vector<int>& truth) {
  std::map<int, std::map<int, int>> table;
  for (std::size_t i = 0; i < clusters.size(); ++i) ++table[clusters[i]][truth[i]];
  int agree = 0;
  for (const auto& [c, counts] : table) {
    int best = 0;
    for (const auto& [l, n] : counts) best = std::max(best, n);
    agree += best;
  }
  return static_cast<double>(agree) / static_cast<double>(clusters.size());
}

Matrix blobs(int per_blob, const std::vector<std::vector<double>>& centers, double sigma, Rng& rng,
             std::vector<int>& truth) {
  const std::size_t d = centers[0].size();
  Matrix m(per_blob * centers.size(), d);
  std::size_t r = 0;
  for (std::size_t k = 0; k < centers.size(); ++k)
    for (int i = 0; i < per_blob; ++i, ++r) {
      for (std::size_t j = 0; j < d; ++j) m(r, j) = centers[k][j] + sigma * standard_normal(rng);
      truth.push_back(static_cast<int>(k));
    }
  return m;
}

std::vector<int> assign_all(const GaussianMixture& g, const Matrix& x) {
  std::vector<int> out;
  for (std::size_t i = 0; i < x.rows; ++i) out.push_back(g.assign(std::span<const double>(x.row(i), x.cols)));
  return out;
}

}  // namespace

TEST(FeatureExtractor, DeterministicAndShaped) {
  FeatureExtractorConfig c;
  FeatureExtractor fx(c);
  auto env = make_env(EnvConfig{}, Split::kTrain);
  const auto img = env.reset({1, 2, 3}).image;
  EXPECT_EQ(fx.extract(img), fx.extract(img));
  EXPECT_EQ(fx.extract(img).size(), static_cast<std::size_t>(c.dim()));
  std::vector<Image> batch(5, img);
  const auto m = fx.extract(std::span<const Image>(batch));
  EXPECT_EQ(m.rows, 5u);
  EXPECT_EQ(m.cols, static_cast<std::size_t>(c.dim()));
  EXPECT_THROW(fx.extract(Image(16, 16)), ShapeError);
}

TEST(FeatureExtractor, DistractorHistogramIgnoresStatePixels) {
  EnvConfig env;
  FeatureExtractorConfig c;
  c.projection_dims = 0;
  c.hist_mask = distractor_mask(env);
  FeatureExtractor fx(c);
  auto world = make_env(env, Split::kTrain);
  // Same style and phase, different layouts: equal distractor pixels.
  const auto a = fx.extract(world.reset({1, 4, 2}).image);
  const auto b = fx.extract(world.reset({9, 4, 2}).image);
  double dist = 0;
  for (std::size_t i = 0; i < a.size(); ++i) dist += (a[i] - b[i]) * (a[i] - b[i]);
  EXPECT_LT(std::sqrt(dist), 1e-9);
}

TEST(FitGmm, SeparatedBlobsHavePurityOne) {
  Rng rng(1);
  std::vector<int> truth;
  const auto x = blobs(100, {{0, 0, 0}, {100, 0, 0}}, 1.0, rng, truth);
  const auto fit = fit_gmm(x, 2, 7);
  EXPECT_EQ(fit.report.final_clusters, 2);
  EXPECT_EQ(purity(assign_all(fit.mixture, x), truth), 1.0);
}

TEST(FitGmm, LogLikelihoodIsMonotone) {
  Rng rng(2);
  std::vector<int> truth;
  const auto x = blobs(80, {{0, 0}, {3, 1}, {1, 4}}, 1.0, rng, truth);
  const auto fit = fit_gmm(x, 3, 3);
  const auto& ll = fit.report.log_likelihoods;
  ASSERT_GE(ll.size(), 2u);
  for (std::size_t i = 1; i < ll.size(); ++i) EXPECT_GE(ll[i], ll[i - 1] - 1e-9 * std::abs(ll[i - 1]));
}

TEST(FitGmm, IdenticalPointsTriggerFallback) {
  Matrix x(50, 3);
  for (auto& v : x.data) v = 1.5;
  const auto fit = fit_gmm(x, 2, 4);
  EXPECT_EQ(fit.report.final_clusters, 1);
  EXPECT_FALSE(fit.report.warnings.empty());
  EXPECT_EQ(fit.mixture.n_components(), 1);
}

TEST(FitGmm, DeterministicRefit) {
  Rng rng(5);
  std::vector<int> truth;
  const auto x = blobs(60, {{0, 0}, {5, 5}, {0, 8}}, 1.0, rng, truth);
  const auto a = fit_gmm(x, 3, 11);
  const auto b = fit_gmm(x, 3, 11);
  EXPECT_EQ(a.mixture.weights, b.mixture.weights);
  EXPECT_EQ(a.mixture.means.data, b.mixture.means.data);
  EXPECT_EQ(a.mixture.variances.data, b.mixture.variances.data);
}

TEST(FitGmm, InvalidArguments) {
  Matrix x(3, 2);
  EXPECT_THROW(fit_gmm(x, 0, 1), InvalidArgument);
  EXPECT_THROW(fit_gmm(x, 4, 1), InvalidArgument);
}

TEST(GaussianMixture, ResponsibilitiesSumToOneAndMeanIsDominant) {
  Rng rng(6);
  std::vector<int> truth;
  const auto x = blobs(50, {{0, 0}, {20, 0}, {0, 20}}, 1.0, rng, truth);
  const auto fit = fit_gmm(x, 3, 2);
  const auto& g = fit.mixture;
  for (std::size_t i = 0; i < x.rows; i += 7) {
    const auto r = g.responsibilities(std::span<const double>(x.row(i), x.cols));
    double s = 0;
    for (double v : r) {
      EXPECT_GE(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  for (int k = 0; k < 3; ++k) EXPECT_EQ(g.assign(std::span<const double>(g.means.row(k), 2)), k);
  EXPECT_THROW(g.assign(std::vector<double>{1, 2, 3}), ShapeError);
}

TEST(ClusterModel, PlantedStylesRecovered) {
  EnvConfig env;
  env.train_styles = {0, 1, 2};
  env.test_styles = {3, 4};
  VecEnv envs(env, Split::kTrain, 8, 3);
  Rng rng(3);
  const auto batch = collect(tests::UniformPolicy(), envs, 64, rng);
  const auto fit = fit_cluster_model(batch.observations, FeatureExtractorConfig{}, 3, 5);
  const auto labels = assign_clusters(fit.model, batch.observations);
  EXPECT_GE(purity(labels, batch.style_ids), 0.9);
}

TEST(ClusterModel, JsonRoundTripPreservesAssignments) {
  EnvConfig env;
  VecEnv envs(env, Split::kTrain, 4, 1);
  Rng rng(1);
  const auto batch = collect(tests::UniformPolicy(), envs, 32, rng);
  FeatureExtractorConfig fc;
  fc.hist_mask = distractor_mask(env);
  const auto fit = fit_cluster_model(batch.observations, fc, 3, 2);
  const auto dir = tests::temp_dir("cluster_json");
  save_cluster_model(fit.model, dir + "/m.json");
  const auto back = load_cluster_model(dir + "/m.json");
  EXPECT_EQ(back.extractor.hist_mask, fc.hist_mask);
  EXPECT_EQ(assign_clusters(back, batch.observations), assign_clusters(fit.model, batch.observations));
  EXPECT_THROW(cluster_model_from_json("{\"format\": \"other\"}"), IoError);
  EXPECT_THROW(load_cluster_model(dir + "/missing.json"), IoError);
  std::filesystem::remove_all(dir);
}
