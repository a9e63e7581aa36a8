#include "core/style_cluster.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>

#include "core/errors.hpp"
#include "core/rng.hpp"

namespace arpo {

// ---------------------------------------------------------------------------
// Feature extraction

FeatureExtractor::FeatureExtractor(FeatureExtractorConfig config) : config_(std::move(config)) {
  if (config_.image_size < 1 || config_.hist_bins < 0 || config_.projection_dims < 0) {
    throw ConfigError("invalid feature extractor configuration");
  }
  if (config_.dim() < 1) throw ConfigError("feature dimension must be >= 1");
  if (!config_.hist_mask.empty() &&
      config_.hist_mask.size() != static_cast<std::size_t>(config_.image_size) * config_.image_size) {
    throw ShapeError("histogram mask does not match image size");
  }
  if (config_.projection_dims > 0) {
    if (config_.patch < 1 || config_.image_size % config_.patch != 0 || config_.n_filters < 1) {
      throw ConfigError("patch must divide image_size for the projection features");
    }
    const int per_side = config_.image_size / config_.patch;
    tiles_ = per_side * per_side;
    Rng rng(hash_combine(config_.seed, 0xf117e5));
    const int fan_in = config_.patch * config_.patch * 3;
    filters_.resize(static_cast<std::size_t>(config_.n_filters) * fan_in);
    for (auto& w : filters_) w = standard_normal(rng) / std::sqrt(static_cast<double>(fan_in));
    const std::size_t act = static_cast<std::size_t>(config_.n_filters) * tiles_;
    projection_.resize(static_cast<std::size_t>(config_.projection_dims) * act);
    for (auto& w : projection_) w = standard_normal(rng) / std::sqrt(static_cast<double>(act));
  }
}

std::vector<double> FeatureExtractor::extract(const Image& image) const {
  const int n = config_.image_size;
  if (image.height != n || image.width != n ||
      image.pixels.size() != static_cast<std::size_t>(n) * n * 3) {
    throw ShapeError("feature extractor expects " + std::to_string(n) + "x" + std::to_string(n) +
                     "x3 images");
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(dim()));

  if (config_.projection_dims > 0) {
    const int p = config_.patch;
    const int per_side = n / p;
    const int fan_in = p * p * 3;
    std::vector<double> act(static_cast<std::size_t>(config_.n_filters) * tiles_);
    for (int ty = 0; ty < per_side; ++ty) {
      for (int tx = 0; tx < per_side; ++tx) {
        const int tile = ty * per_side + tx;
        for (int f = 0; f < config_.n_filters; ++f) {
          const double* w = filters_.data() + static_cast<std::size_t>(f) * fan_in;
          double s = 0.0;
          int k = 0;
          for (int y = 0; y < p; ++y)
            for (int x = 0; x < p; ++x)
              for (int c = 0; c < 3; ++c) s += w[k++] * image.at(ty * p + y, tx * p + x, c);
          act[static_cast<std::size_t>(f) * tiles_ + tile] = std::tanh(s);
        }
      }
    }
    for (int d = 0; d < config_.projection_dims; ++d) {
      const double* w = projection_.data() + static_cast<std::size_t>(d) * act.size();
      double s = 0.0;
      for (std::size_t i = 0; i < act.size(); ++i) s += w[i] * act[i];
      out.push_back(s);
    }
  }

  if (config_.hist_bins > 0) {
    const int bins = config_.hist_bins;
    std::vector<double> hist(static_cast<std::size_t>(3) * bins, 0.0);
    double count = 0.0;
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        if (!config_.hist_mask.empty() && !config_.hist_mask[static_cast<std::size_t>(y) * n + x]) continue;
        count += 1.0;
        for (int c = 0; c < 3; ++c) {
          const double v = std::clamp(static_cast<double>(image.at(y, x, c)), 0.0, 1.0);
          const int b = std::min(static_cast<int>(v * bins), bins - 1);
          hist[static_cast<std::size_t>(c) * bins + b] += 1.0;
        }
      }
    }
    for (double h : hist) out.push_back(count > 0 ? h / count : 0.0);
  }
  return out;
}

Matrix FeatureExtractor::extract(std::span<const Image> images) const {
  Matrix m(images.size(), static_cast<std::size_t>(dim()));
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto f = extract(images[i]);
    std::copy(f.begin(), f.end(), m.row(i));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Gaussian mixture

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

double log_sum_exp(std::span<const double> v) {
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

// log(w_k) + log N(x | mu_k, diag(var_k)) for every component.
void component_log_probs(const GaussianMixture& g, const double* x, std::vector<double>& out) {
  const int k = g.n_components();
  const std::size_t d = g.means.cols;
  out.resize(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j) {
    const double* mu = g.means.row(static_cast<std::size_t>(j));
    const double* var = g.variances.row(static_cast<std::size_t>(j));
    double lp = std::log(g.weights[static_cast<std::size_t>(j)]);
    for (std::size_t f = 0; f < d; ++f) {
      const double diff = x[f] - mu[f];
      lp -= 0.5 * (kLog2Pi + std::log(var[f]) + diff * diff / var[f]);
    }
    out[static_cast<std::size_t>(j)] = lp;
  }
}

std::vector<double> global_variance(const Matrix& x, double floor) {
  std::vector<double> mean(x.cols, 0.0), var(x.cols, 0.0);
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t f = 0; f < x.cols; ++f) mean[f] += x(i, f);
  for (auto& m : mean) m /= static_cast<double>(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t f = 0; f < x.cols; ++f) {
      const double d = x(i, f) - mean[f];
      var[f] += d * d;
    }
  for (auto& v : var) v = std::max(v / static_cast<double>(x.rows), floor);
  return var;
}

GaussianMixture kmeanspp_init(const Matrix& x, int k, Rng& rng, const std::vector<double>& gvar) {
  GaussianMixture g;
  g.weights.assign(static_cast<std::size_t>(k), 1.0 / k);
  g.means = Matrix(static_cast<std::size_t>(k), x.cols);
  g.variances = Matrix(static_cast<std::size_t>(k), x.cols);
  std::vector<double> d2(x.rows, std::numeric_limits<double>::infinity());
  std::size_t pick = uniform_index(rng, x.rows);
  for (int j = 0; j < k; ++j) {
    std::copy(x.row(pick), x.row(pick) + x.cols, g.means.row(static_cast<std::size_t>(j)));
    std::copy(gvar.begin(), gvar.end(), g.variances.row(static_cast<std::size_t>(j)));
    double total = 0.0;
    for (std::size_t i = 0; i < x.rows; ++i) {
      double s = 0.0;
      for (std::size_t f = 0; f < x.cols; ++f) {
        const double diff = x(i, f) - x(pick, f);
        s += diff * diff;
      }
      d2[i] = std::min(d2[i], s);
      total += d2[i];
    }
    if (total <= 0.0) {
      pick = uniform_index(rng, x.rows);
      continue;
    }
    const double u = uniform01(rng) * total;
    double c = 0.0;
    pick = x.rows - 1;
    for (std::size_t i = 0; i < x.rows; ++i) {
      c += d2[i];
      if (u < c) {
        pick = i;
        break;
      }
    }
  }
  return g;
}

// E-step: fills responsibilities (n x k) and returns the mean log-likelihood.
double e_step(const GaussianMixture& g, const Matrix& x, Matrix& resp) {
  const auto k = static_cast<std::size_t>(g.n_components());
  resp = Matrix(x.rows, k);
  std::vector<double> lp;
  double total = 0.0;
  for (std::size_t i = 0; i < x.rows; ++i) {
    component_log_probs(g, x.row(i), lp);
    const double lse = log_sum_exp(lp);
    total += lse;
    for (std::size_t j = 0; j < k; ++j) resp(i, j) = std::exp(lp[j] - lse);
  }
  return total / static_cast<double>(x.rows);
}

void m_step(GaussianMixture& g, const Matrix& x, const Matrix& resp, double floor) {
  const std::size_t k = resp.cols, d = x.cols;
  for (std::size_t j = 0; j < k; ++j) {
    double nk = 0.0;
    for (std::size_t i = 0; i < x.rows; ++i) nk += resp(i, j);
    g.weights[j] = nk / static_cast<double>(x.rows);
    double* mu = g.means.row(j);
    double* var = g.variances.row(j);
    if (nk <= 0.0) continue;  // left for the degeneracy check
    std::fill(mu, mu + d, 0.0);
    for (std::size_t i = 0; i < x.rows; ++i) {
      const double r = resp(i, j);
      if (r == 0.0) continue;
      for (std::size_t f = 0; f < d; ++f) mu[f] += r * x(i, f);
    }
    for (std::size_t f = 0; f < d; ++f) mu[f] /= nk;
    std::fill(var, var + d, 0.0);
    for (std::size_t i = 0; i < x.rows; ++i) {
      const double r = resp(i, j);
      if (r == 0.0) continue;
      for (std::size_t f = 0; f < d; ++f) {
        const double diff = x(i, f) - mu[f];
        var[f] += r * diff * diff;
      }
    }
    for (std::size_t f = 0; f < d; ++f) var[f] = std::max(var[f] / nk, floor);
  }
  double s = 0.0;
  for (double w : g.weights) s += w;
  for (double& w : g.weights) w /= s;
}

// Index of the first degenerate component, or -1.
int find_degenerate(const GaussianMixture& g, std::size_t n, double floor) {
  const int k = g.n_components();
  const std::size_t d = g.means.cols;
  for (int j = 0; j < k; ++j) {
    const auto uj = static_cast<std::size_t>(j);
    if (g.weights[uj] * static_cast<double>(n) < 0.5) return j;
    bool collapsed = true;
    for (std::size_t f = 0; f < d; ++f) collapsed = collapsed && g.variances(uj, f) <= floor * (1 + 1e-9);
    if (collapsed && k > 1) return j;
    for (int o = 0; o < j; ++o) {
      const auto uo = static_cast<std::size_t>(o);
      bool same = true;
      for (std::size_t f = 0; f < d && same; ++f) {
        const double tol = 1e-9 * (1.0 + std::abs(g.means(uo, f)));
        same = std::abs(g.means(uj, f) - g.means(uo, f)) <= tol &&
               std::abs(g.variances(uj, f) - g.variances(uo, f)) <= 1e-9 * g.variances(uo, f);
      }
      if (same) return j;
    }
  }
  return -1;
}

struct RunResult {
  GaussianMixture mixture;
  std::vector<double> history;
  int iterations = 0;
  bool converged = false;
  bool degenerate = false;
  int reinitializations = 0;
};

RunResult run_em(const Matrix& x, int k, Rng& rng, const GmmOptions& opt,
                 const std::vector<double>& gvar) {
  RunResult out;
  GaussianMixture g = kmeanspp_init(x, k, rng, gvar);
  Matrix resp;
  int retries = 0;
  double prev = e_step(g, x, resp);
  out.history.push_back(prev);
  for (int it = 0; it < opt.max_iters; ++it) {
    m_step(g, x, resp, opt.var_floor);
    const int bad = find_degenerate(g, x.rows, opt.var_floor);
    if (bad >= 0) {
      if (++retries > opt.max_retries) {
        out.degenerate = true;
        break;
      }
      ++out.reinitializations;
      const auto ub = static_cast<std::size_t>(bad);
      const std::size_t pick = uniform_index(rng, x.rows);
      std::copy(x.row(pick), x.row(pick) + x.cols, g.means.row(ub));
      std::copy(gvar.begin(), gvar.end(), g.variances.row(ub));
      g.weights[ub] = 1.0 / k;
      double s = 0.0;
      for (double w : g.weights) s += w;
      for (double& w : g.weights) w /= s;
      prev = e_step(g, x, resp);
      out.history.assign(1, prev);
      continue;
    }
    const double ll = e_step(g, x, resp);
    out.history.push_back(ll);
    out.iterations = it + 1;
    if (std::abs(ll - prev) < opt.tol) {
      out.converged = true;
      break;
    }
    prev = ll;
  }
  out.mixture = std::move(g);
  return out;
}

}  // namespace

std::vector<double> GaussianMixture::responsibilities(std::span<const double> x) const {
  if (x.size() != means.cols) throw ShapeError("feature dimension mismatch");
  std::vector<double> lp;
  component_log_probs(*this, x.data(), lp);
  const double lse = log_sum_exp(lp);
  for (double& v : lp) v = std::exp(v - lse);
  return lp;
}

int GaussianMixture::assign(std::span<const double> x) const {
  if (x.size() != means.cols) throw ShapeError("feature dimension mismatch");
  std::vector<double> lp;
  component_log_probs(*this, x.data(), lp);
  int best = 0;
  for (int j = 1; j < static_cast<int>(lp.size()); ++j) {
    if (lp[static_cast<std::size_t>(j)] > lp[static_cast<std::size_t>(best)]) best = j;
  }
  return best;
}

double GaussianMixture::mean_log_likelihood(const Matrix& x) const {
  Matrix resp;
  return e_step(*this, x, resp);
}

GmmFit fit_gmm(const Matrix& features, int n_clusters, std::uint64_t seed, const GmmOptions& options) {
  if (features.cols < 1) throw InvalidArgument("features must have dimension >= 1");
  if (n_clusters < 1) throw InvalidArgument("n_clusters must be >= 1");
  if (features.rows < static_cast<std::size_t>(n_clusters)) {
    throw InvalidArgument("need at least n_clusters feature rows");
  }
  Rng rng(hash_combine(seed, 0x6a11));
  const auto gvar = global_variance(features, options.var_floor);

  GmmFit fit;
  fit.report.requested_clusters = n_clusters;
  int total_reinits = 0;
  for (int k = n_clusters; k >= 1; --k) {
    bool found = false;
    RunResult best;
    double best_ll = -std::numeric_limits<double>::infinity();
    for (int r = 0; r < std::max(1, options.restarts); ++r) {
      RunResult run = run_em(features, k, rng, options, gvar);
      total_reinits += run.reinitializations;
      if (run.degenerate) continue;
      if (!found || run.history.back() > best_ll) {
        best_ll = run.history.back();
        best = std::move(run);
        found = true;
      }
    }
    if (found || k == 1) {
      if (!found) {
        // A single component cannot be re-seeded meaningfully; keep it.
        GaussianMixture g;
        g.weights = {1.0};
        g.means = Matrix(1, features.cols);
        g.variances = Matrix(1, features.cols);
        for (std::size_t i = 0; i < features.rows; ++i)
          for (std::size_t f = 0; f < features.cols; ++f)
            g.means(0, f) += features(i, f) / static_cast<double>(features.rows);
        std::copy(gvar.begin(), gvar.end(), g.variances.row(0));
        best.mixture = g;
        best.history = {g.mean_log_likelihood(features)};
        fit.report.warnings.push_back("single component collapsed onto identical features");
      }
      fit.mixture = std::move(best.mixture);
      fit.report.final_clusters = k;
      fit.report.log_likelihoods = std::move(best.history);
      fit.report.iterations = best.iterations;
      fit.report.converged = best.converged;
      fit.report.reinitializations = total_reinits;
      return fit;
    }
    fit.report.warnings.push_back("degenerate components persisted with " + std::to_string(k) +
                                  " clusters; reducing to " + std::to_string(k - 1));
  }
  return fit;
}

ClusterFit fit_cluster_model(std::span<const Image> images, const FeatureExtractorConfig& extractor,
                             int n_clusters, std::uint64_t seed, const GmmOptions& options) {
  const FeatureExtractor fx(extractor);
  const Matrix features = fx.extract(images);
  GmmFit g = fit_gmm(features, n_clusters, seed, options);
  return ClusterFit{ClusterModel{extractor, std::move(g.mixture)}, std::move(g.report)};
}

int assign_cluster(const ClusterModel& model, const Image& image) {
  const FeatureExtractor fx(model.extractor);
  return model.mixture.assign(fx.extract(image));
}

std::vector<int> assign_clusters(const ClusterModel& model, std::span<const Image> images) {
  const FeatureExtractor fx(model.extractor);
  std::vector<int> out;
  out.reserve(images.size());
  for (const auto& img : images) out.push_back(model.mixture.assign(fx.extract(img)));
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

std::string cluster_model_to_json(const ClusterModel& model) {
  using nlohmann::json;
  const auto& e = model.extractor;
  std::string mask;
  for (auto m : e.hist_mask) mask.push_back(m ? '1' : '0');
  json j;
  j["format"] = "arpo.cluster_model";
  j["version"] = kClusterFormatVersion;
  j["extractor"] = {{"image_size", e.image_size}, {"projection_dims", e.projection_dims},
                    {"n_filters", e.n_filters},   {"patch", e.patch},
                    {"hist_bins", e.hist_bins},   {"hist_mask", mask},
                    {"seed", e.seed}};
  const auto& g = model.mixture;
  j["n_clusters"] = g.n_components();
  j["dim"] = g.dim();
  j["weights"] = g.weights;
  j["means"] = g.means.data;
  j["variances"] = g.variances.data;
  return j.dump(1);
}

ClusterModel cluster_model_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format") != "arpo.cluster_model") throw IoError("not a cluster model file");
    if (j.at("version").get<int>() != kClusterFormatVersion) {
      throw IoError("unsupported cluster model version");
    }
    ClusterModel m;
    const auto& e = j.at("extractor");
    m.extractor.image_size = e.at("image_size");
    m.extractor.projection_dims = e.at("projection_dims");
    m.extractor.n_filters = e.at("n_filters");
    m.extractor.patch = e.at("patch");
    m.extractor.hist_bins = e.at("hist_bins");
    m.extractor.seed = e.at("seed");
    for (char c : e.at("hist_mask").get<std::string>()) m.extractor.hist_mask.push_back(c == '1');
    const auto k = j.at("n_clusters").get<std::size_t>();
    const auto d = j.at("dim").get<std::size_t>();
    m.mixture.weights = j.at("weights").get<std::vector<double>>();
    m.mixture.means = Matrix(k, d);
    m.mixture.variances = Matrix(k, d);
    m.mixture.means.data = j.at("means").get<std::vector<double>>();
    m.mixture.variances.data = j.at("variances").get<std::vector<double>>();
    if (m.mixture.weights.size() != k || m.mixture.means.data.size() != k * d ||
        m.mixture.variances.data.size() != k * d) {
      throw IoError("cluster model arrays have inconsistent sizes");
    }
    return m;
  } catch (const nlohmann::json::exception& ex) {
    throw IoError(std::string("malformed cluster model: ") + ex.what());
  }
}

void save_cluster_model(const ClusterModel& model, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write cluster model: " + path);
  f << cluster_model_to_json(model) << "\n";
}

ClusterModel load_cluster_model(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read cluster model: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return cluster_model_from_json(ss.str());
}

}  // namespace arpo
