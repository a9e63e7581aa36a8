#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "core/config.hpp"
#include "core/rng.hpp"

namespace arpo {

// H x W x 3 image, row-major HWC, values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, 0.f) {}

  static constexpr int channels = 3;
  std::size_t size() const { return pixels.size(); }
  float& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  bool operator==(const Image&) const = default;
};

// Per-pixel 0/1 mask, row-major H x W.
using PixelMask = std::vector<std::uint8_t>;

struct GridPos {
  int row = 0;
  int col = 0;
  bool operator==(const GridPos&) const = default;
};

struct LevelSpec {
  std::uint64_t layout_seed = 0;
  int style_id = 0;
  int dynamic_phase = 0;
  bool operator==(const LevelSpec&) const = default;
};

// Hidden task state. Agents never see it; tests and oracles may.
struct LatentState {
  GridPos agent;
  GridPos goal;
  bool operator==(const LatentState&) const = default;
};

struct Observation {
  Image image;
  LatentState latent;
};

struct StepInfo {
  std::uint64_t level_id = 0;
  int episode_step = 0;
};

struct StepResult {
  Observation observation;
  double reward = 0.0;
  bool done = false;
  StepInfo info;
};

enum class Split { kTrain, kTest };

const char* split_name(Split s);
Split parse_split(const std::string& s);

enum Action : int { kNoop = 0, kUp = 1, kDown = 2, kLeft = 3, kRight = 4 };
inline constexpr int kNumActions = 5;

// Environment descriptor. Serialized through the `env.*` keys of a KvConfig.
struct EnvConfig {
  int n_styles = 24;
  std::vector<int> train_styles = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15};
  std::vector<int> test_styles = {16, 17, 18, 19, 20, 21, 22, 23};
  int image_size = 32;
  int grid_size = 5;
  int cell_px = 4;
  int horizon = 24;
  int max_walls = 3;
  double step_cost = 0.01;
  double goal_reward = 1.0;
  std::uint64_t style_seed = 0;
  int n_phases = 16;
  int train_layouts = 64;

  // Throws ConfigError when any precondition is violated.
  void validate() const;
  double reward_min() const { return -step_cost; }
  double reward_max() const { return goal_reward; }
  int grid_offset() const { return (image_size - grid_size * cell_px) / 2; }

  static EnvConfig from_kv(const KvConfig& kv);
  void to_kv(KvConfig& kv) const;
};

// Visual parameters of one distractor style.
struct Style {
  std::array<float, 3> background{};
  int texture = 0;  // 0 none, 1 horizontal stripes, 2 vertical stripes, 3 checker, 4 dots
  std::array<float, 3> texture_color{};
  int texture_period = 2;
  std::array<float, 3> band_color{};
  int band_period = 6;
  int band_width = 2;
  int band_speed = 1;
};

Style make_style(const EnvConfig& config, int style_id);

struct Layout {
  int grid_size = 0;
  std::vector<std::uint8_t> walls;  // grid_size * grid_size
  GridPos start;
  GridPos goal;
  bool is_wall(GridPos p) const { return walls[static_cast<std::size_t>(p.row) * grid_size + p.col] != 0; }
};

Layout make_layout(const EnvConfig& config, std::uint64_t layout_seed);
// Breadth-first distance from `from` to the layout goal; -1 if unreachable.
int shortest_path_length(const Layout& layout, GridPos from);
GridPos apply_move(const Layout& layout, GridPos pos, int action);

PixelMask state_mask(const EnvConfig& config);
PixelMask distractor_mask(const EnvConfig& config);

Image render(const EnvConfig& config, const Layout& layout, const LatentState& latent,
             const Style& style, int dynamic_phase);

struct EnvSnapshot {
  LevelSpec level;
  LatentState latent;
  int episode_step = 0;
  bool done = true;
  bool started = false;
};

// One episode-at-a-time handle opened for a single split. Not thread-safe;
// independent handles may be used from different threads.
class DistractorWorld {
 public:
  DistractorWorld(EnvConfig config, Split split);

  Observation reset(const LevelSpec& level);
  StepResult step(int action);

  bool done() const { return done_; }
  Split split() const { return split_; }
  const EnvConfig& config() const { return config_; }
  const LevelSpec& level() const { return level_; }
  const Layout& layout() const { return layout_; }
  const LatentState& latent() const { return latent_; }
  int episode_step() const { return episode_step_; }

  EnvSnapshot snapshot() const;
  void restore(const EnvSnapshot& snap);

 private:
  Image current_image() const;
  void load_level(const LevelSpec& level);

  EnvConfig config_;
  Split split_;
  PixelMask state_mask_;
  LevelSpec level_;
  Layout layout_;
  Image backdrop_;  // distractor pixels of the current level
  LatentState latent_;
  int episode_step_ = 0;
  bool done_ = true;
  bool started_ = false;
};

DistractorWorld make_env(const EnvConfig& config, Split split);

// Level distribution of a split. The train split is a fixed finite set of
// `train_layouts x |train_styles|` levels; the test split draws fresh layouts
// with held-out styles.
class LevelSampler {
 public:
  LevelSampler(EnvConfig config, Split split);
  LevelSpec sample(Rng& rng) const;
  std::vector<LevelSpec> enumerate_train() const;
  // JSON list of LevelSpec: the full train set, or `count` sampled test levels.
  std::string export_json(std::size_t count, std::uint64_t seed) const;

 private:
  EnvConfig config_;
  Split split_;
};

std::vector<LevelSpec> levels_from_json(const std::string& text);

inline constexpr std::uint64_t kTestLayoutOffset = std::uint64_t{1} << 32;

}  // namespace arpo
