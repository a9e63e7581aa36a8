#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "core/distractor_world.hpp"

namespace arpo {

// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  double* row(std::size_t i) { return data.data() + i * cols; }
  const double* row(std::size_t i) const { return data.data() + i * cols; }
  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

struct FeatureExtractorConfig {
  int image_size = 32;
  // Random-projection part: `n_filters` fixed random filters applied to
  // non-overlapping `patch` x `patch` tiles, tanh, then a fixed Gaussian
  // projection down to `projection_dims`. Zero disables it.
  int projection_dims = 40;
  int n_filters = 8;
  int patch = 4;
  // Per-channel color histogram over [0, 1] with `hist_bins` bins, computed
  // over `hist_mask` pixels (all pixels when empty).
  int hist_bins = 8;
  PixelMask hist_mask;
  std::uint64_t seed = 0x5eed;

  int dim() const { return projection_dims + 3 * hist_bins; }
};

// Frozen image -> R^d mapping used to group observations by visual style.
class FeatureExtractor {
 public:
  explicit FeatureExtractor(FeatureExtractorConfig config);

  int dim() const { return config_.dim(); }
  const FeatureExtractorConfig& config() const { return config_; }
  std::vector<double> extract(const Image& image) const;
  Matrix extract(std::span<const Image> images) const;

 private:
  FeatureExtractorConfig config_;
  std::vector<double> filters_;     // n_filters x (patch * patch * 3)
  std::vector<double> projection_;  // projection_dims x (n_filters * tiles)
  int tiles_ = 0;
};

// Diagonal-covariance Gaussian mixture.
struct GaussianMixture {
  std::vector<double> weights;  // k
  Matrix means;                 // k x d
  Matrix variances;             // k x d

  int n_components() const { return static_cast<int>(weights.size()); }
  int dim() const { return static_cast<int>(means.cols); }
  // Posterior responsibilities of one feature vector (sums to 1).
  std::vector<double> responsibilities(std::span<const double> x) const;
  // Argmax of the responsibilities, ties toward the lower index.
  int assign(std::span<const double> x) const;
  // Mean per-point log-likelihood of the rows of `x`.
  double mean_log_likelihood(const Matrix& x) const;
};

struct GmmOptions {
  int max_iters = 200;
  double tol = 1e-6;  // on the mean per-point log-likelihood
  int restarts = 10;
  double var_floor = 1e-6;
  int max_retries = 3;
};

struct GmmFitReport {
  int requested_clusters = 0;
  int final_clusters = 0;
  // Per-iteration mean log-likelihood of the selected run, starting from the
  // last (re)initialization.
  std::vector<double> log_likelihoods;
  int iterations = 0;
  bool converged = false;
  int reinitializations = 0;
  std::vector<std::string> warnings;
};

struct GmmFit {
  GaussianMixture mixture;
  GmmFitReport report;
};

// EM with k-means++ seeding and several restarts, keeping the best
// likelihood. Degenerate components (empty, collapsed onto a point, or
// duplicating another component) are re-seeded from a random data point; if
// that keeps failing the component count is reduced by one with a warning.
GmmFit fit_gmm(const Matrix& features, int n_clusters, std::uint64_t seed,
               const GmmOptions& options = {});

struct ClusterModel {
  FeatureExtractorConfig extractor;
  GaussianMixture mixture;

  int n_clusters() const { return mixture.n_components(); }
};

// Fitted model over the given observations.
struct ClusterFit {
  ClusterModel model;
  GmmFitReport report;
};

ClusterFit fit_cluster_model(std::span<const Image> images, const FeatureExtractorConfig& extractor,
                             int n_clusters, std::uint64_t seed, const GmmOptions& options = {});

// Assigns images to style domains with a frozen model. The extractor is
// rebuilt once per call from its seed.
int assign_cluster(const ClusterModel& model, const Image& image);
std::vector<int> assign_clusters(const ClusterModel& model, std::span<const Image> images);

inline constexpr int kClusterFormatVersion = 1;
std::string cluster_model_to_json(const ClusterModel& model);
ClusterModel cluster_model_from_json(const std::string& text);
void save_cluster_model(const ClusterModel& model, const std::string& path);
ClusterModel load_cluster_model(const std::string& path);

}  // namespace arpo
