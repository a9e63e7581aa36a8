#include "core/distractor_world.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <set>

#include <nlohmann/json.hpp>

#include "core/errors.hpp"

namespace arpo {
namespace {

constexpr std::array<float, 3> kEmptyColor = {0.f, 0.f, 0.f};
constexpr std::array<float, 3> kWallColor = {0.5f, 0.5f, 0.5f};
constexpr std::array<float, 3> kGoalColor = {0.f, 1.f, 0.f};
constexpr std::array<float, 3> kAgentColor = {1.f, 1.f, 1.f};

std::array<float, 3> hsv_to_rgb(double h, double s, double v) {
  const double hh = std::fmod(h, 1.0) * 6.0;
  const int i = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  double r = 0, g = 0, b = 0;
  switch (i) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
  return {static_cast<float>(r), static_cast<float>(g), static_cast<float>(b)};
}

std::array<float, 3> random_color(Rng& rng) {
  const double h = uniform01(rng);
  const double s = 0.4 + 0.6 * uniform01(rng);
  const double v = 0.3 + 0.6 * uniform01(rng);
  return hsv_to_rgb(h, s, v);
}

bool texture_on(const Style& st, int y, int x) {
  const int p = st.texture_period;
  switch (st.texture) {
    case 1: return (y % (2 * p)) < p;
    case 2: return (x % (2 * p)) < p;
    case 3: return ((y / p + x / p) % 2) == 0;
    case 4: return (y % (p + 2)) == 0 && (x % (p + 2)) == 0;
    default: return false;
  }
}

void check_styles(const EnvConfig& c, const std::vector<int>& styles, const char* name) {
  if (styles.empty()) throw ConfigError(std::string(name) + " style set is empty");
  for (int s : styles) {
    if (s < 0 || s >= c.n_styles) {
      throw ConfigError(std::string(name) + " style " + std::to_string(s) +
                        " outside [0, n_styles)");
    }
  }
}

void paint(Image& img, const EnvConfig& c, GridPos p, const std::array<float, 3>& color) {
  const int inner = std::max(1, c.cell_px / 2);
  const int pad = (c.cell_px - inner) / 2;
  const int y0 = c.grid_offset() + p.row * c.cell_px + pad;
  const int x0 = c.grid_offset() + p.col * c.cell_px + pad;
  for (int y = y0; y < y0 + inner; ++y)
    for (int x = x0; x < x0 + inner; ++x)
      for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = color[ch];
}

Image render_backdrop(const EnvConfig& c, const Style& st, int phase) {
  Image img(c.image_size, c.image_size);
  for (int y = 0; y < c.image_size; ++y) {
    for (int x = 0; x < c.image_size; ++x) {
      std::array<float, 3> col = st.background;
      if (texture_on(st, y, x)) col = st.texture_color;
      const int band_pos = (x + y + phase * st.band_speed) % st.band_period;
      if (band_pos < st.band_width) {
        for (int ch = 0; ch < 3; ++ch) col[ch] = 0.5f * col[ch] + 0.5f * st.band_color[ch];
      }
      for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = col[ch];
    }
  }
  return img;
}

void paint_state(Image& img, const EnvConfig& c, const Layout& layout, const LatentState& latent) {
  for (int r = 0; r < c.grid_size; ++r) {
    for (int col = 0; col < c.grid_size; ++col) {
      const GridPos p{r, col};
      paint(img, c, p, layout.is_wall(p) ? kWallColor : kEmptyColor);
    }
  }
  paint(img, c, latent.goal, kGoalColor);
  paint(img, c, latent.agent, kAgentColor);
}

}  // namespace

const char* split_name(Split s) { return s == Split::kTrain ? "train" : "test"; }

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "test") return Split::kTest;
  throw InvalidArgument("unknown split '" + s + "' (expected train or test)");
}

void EnvConfig::validate() const {
  if (n_styles < 2) throw ConfigError("n_styles must be >= 2");
  check_styles(*this, train_styles, "train");
  check_styles(*this, test_styles, "test");
  const std::set<int> train(train_styles.begin(), train_styles.end());
  for (int s : test_styles) {
    if (train.count(s)) {
      throw ConfigError("train and test style sets overlap at style " + std::to_string(s));
    }
  }
  if (grid_size < 2) throw ConfigError("grid_size must be >= 2");
  if (cell_px < 2) throw ConfigError("cell_px must be >= 2");
  if (grid_size * cell_px > image_size) throw ConfigError("grid does not fit in the image");
  if (horizon < 1) throw ConfigError("horizon must be >= 1");
  if (max_walls < 0 || max_walls > grid_size * grid_size - 2) {
    throw ConfigError("max_walls out of range");
  }
  if (n_phases < 1) throw ConfigError("n_phases must be >= 1");
  if (train_layouts < 1) throw ConfigError("train_layouts must be >= 1");
  if (!(step_cost >= 0) || !(goal_reward > 0)) throw ConfigError("bad reward magnitudes");
}

EnvConfig EnvConfig::from_kv(const KvConfig& kv) {
  EnvConfig c;
  c.n_styles = static_cast<int>(kv.get_int("env.n_styles", c.n_styles));
  c.train_styles = kv.get_int_list("env.train_styles", c.train_styles);
  c.test_styles = kv.get_int_list("env.test_styles", c.test_styles);
  c.image_size = static_cast<int>(kv.get_int("env.image_size", c.image_size));
  c.grid_size = static_cast<int>(kv.get_int("env.grid_size", c.grid_size));
  c.cell_px = static_cast<int>(kv.get_int("env.cell_px", c.cell_px));
  c.horizon = static_cast<int>(kv.get_int("env.horizon", c.horizon));
  c.max_walls = static_cast<int>(kv.get_int("env.max_walls", c.max_walls));
  c.step_cost = kv.get_double("env.step_cost", c.step_cost);
  c.goal_reward = kv.get_double("env.goal_reward", c.goal_reward);
  c.style_seed = static_cast<std::uint64_t>(kv.get_int("env.style_seed", static_cast<std::int64_t>(c.style_seed)));
  c.n_phases = static_cast<int>(kv.get_int("env.n_phases", c.n_phases));
  c.train_layouts = static_cast<int>(kv.get_int("env.train_layouts", c.train_layouts));
  c.validate();
  return c;
}

void EnvConfig::to_kv(KvConfig& kv) const {
  kv.set("env.n_styles", std::to_string(n_styles));
  kv.set("env.train_styles", format_int_list(train_styles));
  kv.set("env.test_styles", format_int_list(test_styles));
  kv.set("env.image_size", std::to_string(image_size));
  kv.set("env.grid_size", std::to_string(grid_size));
  kv.set("env.cell_px", std::to_string(cell_px));
  kv.set("env.horizon", std::to_string(horizon));
  kv.set("env.max_walls", std::to_string(max_walls));
  kv.set("env.step_cost", format_double(step_cost));
  kv.set("env.goal_reward", format_double(goal_reward));
  kv.set("env.style_seed", std::to_string(style_seed));
  kv.set("env.n_phases", std::to_string(n_phases));
  kv.set("env.train_layouts", std::to_string(train_layouts));
}

Style make_style(const EnvConfig& config, int style_id) {
  Rng rng(hash_combine(config.style_seed, static_cast<std::uint64_t>(style_id) + 0x5757));
  Style st;
  st.background = random_color(rng);
  st.texture = static_cast<int>(uniform_index(rng, 5));
  st.texture_color = random_color(rng);
  st.texture_period = 1 + static_cast<int>(uniform_index(rng, 3));
  st.band_color = random_color(rng);
  st.band_period = 4 + static_cast<int>(uniform_index(rng, 5));
  st.band_width = 1 + static_cast<int>(uniform_index(rng, 2));
  st.band_speed = 1 + static_cast<int>(uniform_index(rng, 3));
  return st;
}

Layout make_layout(const EnvConfig& config, std::uint64_t layout_seed) {
  const int n = config.grid_size;
  const auto cells = static_cast<std::uint64_t>(n) * n;
  Rng rng(hash_combine(layout_seed, 0x1a40u));
  for (;;) {
    Layout layout;
    layout.grid_size = n;
    layout.walls.assign(cells, 0);
    const auto n_walls = uniform_index(rng, static_cast<std::uint64_t>(config.max_walls) + 1);
    for (std::uint64_t w = 0; w < n_walls; ++w) layout.walls[uniform_index(rng, cells)] = 1;
    std::vector<std::uint64_t> free;
    for (std::uint64_t i = 0; i < cells; ++i)
      if (!layout.walls[i]) free.push_back(i);
    if (free.size() < 2) continue;
    const auto a = free[uniform_index(rng, free.size())];
    auto g = a;
    while (g == a) g = free[uniform_index(rng, free.size())];
    layout.start = {static_cast<int>(a / n), static_cast<int>(a % n)};
    layout.goal = {static_cast<int>(g / n), static_cast<int>(g % n)};
    if (shortest_path_length(layout, layout.start) > 0) return layout;
  }
}

GridPos apply_move(const Layout& layout, GridPos pos, int action) {
  GridPos next = pos;
  switch (action) {
    case kUp: --next.row; break;
    case kDown: ++next.row; break;
    case kLeft: --next.col; break;
    case kRight: ++next.col; break;
    default: break;
  }
  const int n = layout.grid_size;
  if (next.row < 0 || next.row >= n || next.col < 0 || next.col >= n) return pos;
  if (layout.is_wall(next)) return pos;
  return next;
}

int shortest_path_length(const Layout& layout, GridPos from) {
  const int n = layout.grid_size;
  std::vector<int> dist(static_cast<std::size_t>(n) * n, -1);
  std::deque<GridPos> queue{from};
  dist[static_cast<std::size_t>(from.row) * n + from.col] = 0;
  while (!queue.empty()) {
    const GridPos p = queue.front();
    queue.pop_front();
    const int d = dist[static_cast<std::size_t>(p.row) * n + p.col];
    if (p == layout.goal) return d;
    for (int a = kUp; a <= kRight; ++a) {
      const GridPos q = apply_move(layout, p, a);
      auto& dq = dist[static_cast<std::size_t>(q.row) * n + q.col];
      if (dq < 0) {
        dq = d + 1;
        queue.push_back(q);
      }
    }
  }
  return -1;
}

PixelMask state_mask(const EnvConfig& c) {
  PixelMask mask(static_cast<std::size_t>(c.image_size) * c.image_size, 0);
  const int inner = std::max(1, c.cell_px / 2);
  const int pad = (c.cell_px - inner) / 2;
  for (int r = 0; r < c.grid_size; ++r) {
    for (int col = 0; col < c.grid_size; ++col) {
      const int y0 = c.grid_offset() + r * c.cell_px + pad;
      const int x0 = c.grid_offset() + col * c.cell_px + pad;
      for (int y = y0; y < y0 + inner; ++y)
        for (int x = x0; x < x0 + inner; ++x) mask[static_cast<std::size_t>(y) * c.image_size + x] = 1;
    }
  }
  return mask;
}

PixelMask distractor_mask(const EnvConfig& c) {
  PixelMask mask = state_mask(c);
  for (auto& m : mask) m = m ? 0 : 1;
  return mask;
}

Image render(const EnvConfig& config, const Layout& layout, const LatentState& latent,
             const Style& style, int dynamic_phase) {
  Image img = render_backdrop(config, style, dynamic_phase);
  paint_state(img, config, layout, latent);
  return img;
}

DistractorWorld::DistractorWorld(EnvConfig config, Split split)
    : config_(std::move(config)), split_(split) {
  config_.validate();
  state_mask_ = state_mask(config_);
}

DistractorWorld make_env(const EnvConfig& config, Split split) {
  return DistractorWorld(config, split);
}

void DistractorWorld::load_level(const LevelSpec& level) {
  const auto& allowed = split_ == Split::kTrain ? config_.train_styles : config_.test_styles;
  if (std::find(allowed.begin(), allowed.end(), level.style_id) == allowed.end()) {
    throw SplitViolation("style " + std::to_string(level.style_id) + " is not in the " +
                         split_name(split_) + " split");
  }
  if (level.dynamic_phase < 0) throw DomainError("dynamic_phase must be >= 0");
  level_ = level;
  layout_ = make_layout(config_, level.layout_seed);
  backdrop_ = render_backdrop(config_, make_style(config_, level.style_id), level.dynamic_phase);
}

Observation DistractorWorld::reset(const LevelSpec& level) {
  load_level(level);
  latent_ = LatentState{layout_.start, layout_.goal};
  episode_step_ = 0;
  done_ = false;
  started_ = true;
  return Observation{current_image(), latent_};
}

StepResult DistractorWorld::step(int action) {
  if (!started_) throw UsageError("step() called before reset()");
  if (done_) throw UsageError("step() called after the episode finished");
  if (action < 0 || action >= kNumActions) {
    throw DomainError("action " + std::to_string(action) + " outside the action set");
  }
  latent_.agent = apply_move(layout_, latent_.agent, action);
  ++episode_step_;
  StepResult result;
  if (latent_.agent == latent_.goal) {
    result.reward = config_.goal_reward;
    done_ = true;
  } else {
    result.reward = -config_.step_cost;
    done_ = episode_step_ >= config_.horizon;
  }
  result.done = done_;
  result.info = StepInfo{level_.layout_seed, episode_step_};
  result.observation = Observation{current_image(), latent_};
  return result;
}

Image DistractorWorld::current_image() const {
  Image img = backdrop_;
  paint_state(img, config_, layout_, latent_);
  return img;
}

EnvSnapshot DistractorWorld::snapshot() const {
  return EnvSnapshot{level_, latent_, episode_step_, done_, started_};
}

void DistractorWorld::restore(const EnvSnapshot& snap) {
  if (snap.started) load_level(snap.level);
  latent_ = snap.latent;
  episode_step_ = snap.episode_step;
  done_ = snap.done;
  started_ = snap.started;
}

LevelSampler::LevelSampler(EnvConfig config, Split split)
    : config_(std::move(config)), split_(split) {
  config_.validate();
}

namespace {
int train_phase(const EnvConfig& c, std::uint64_t layout, int style) {
  return static_cast<int>(hash_combine(layout, static_cast<std::uint64_t>(style)) %
                          static_cast<std::uint64_t>(c.n_phases));
}
}  // namespace

LevelSpec LevelSampler::sample(Rng& rng) const {
  LevelSpec level;
  if (split_ == Split::kTrain) {
    level.layout_seed = uniform_index(rng, static_cast<std::uint64_t>(config_.train_layouts));
    level.style_id = config_.train_styles[uniform_index(rng, config_.train_styles.size())];
    level.dynamic_phase = train_phase(config_, level.layout_seed, level.style_id);
  } else {
    level.layout_seed = kTestLayoutOffset + (rng() >> 16);
    level.style_id = config_.test_styles[uniform_index(rng, config_.test_styles.size())];
    level.dynamic_phase = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(config_.n_phases)));
  }
  return level;
}

std::vector<LevelSpec> LevelSampler::enumerate_train() const {
  std::vector<LevelSpec> out;
  for (int l = 0; l < config_.train_layouts; ++l) {
    for (int s : config_.train_styles) {
      const auto layout = static_cast<std::uint64_t>(l);
      out.push_back(LevelSpec{layout, s, train_phase(config_, layout, s)});
    }
  }
  return out;
}

std::string LevelSampler::export_json(std::size_t count, std::uint64_t seed) const {
  std::vector<LevelSpec> levels;
  if (split_ == Split::kTrain) {
    levels = enumerate_train();
  } else {
    Rng rng(seed);
    for (std::size_t i = 0; i < count; ++i) levels.push_back(sample(rng));
  }
  nlohmann::json j = nlohmann::json::array();
  for (const auto& l : levels) {
    j.push_back({{"layout_seed", l.layout_seed},
                 {"style_id", l.style_id},
                 {"dynamic_phase", l.dynamic_phase}});
  }
  return j.dump(1);
}

std::vector<LevelSpec> levels_from_json(const std::string& text) {
  std::vector<LevelSpec> out;
  try {
    const auto j = nlohmann::json::parse(text);
    for (const auto& e : j) {
      out.push_back(LevelSpec{e.at("layout_seed").get<std::uint64_t>(),
                              e.at("style_id").get<int>(),
                              e.at("dynamic_phase").get<int>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed level list: ") + e.what());
  }
  return out;
}

}  // namespace arpo
