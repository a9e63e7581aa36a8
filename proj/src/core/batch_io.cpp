#include "core/batch_io.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include "core/errors.hpp"

namespace arpo {
namespace {

constexpr char kMagic[8] = {'A', 'R', 'P', 'O', 'B', 'A', 'T', '\0'};

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1, kI64 = 2, kU8 = 3, kI32 = 4 };

template <typename T>
DType dtype_of();
template <> DType dtype_of<float>() { return DType::kF32; }
template <> DType dtype_of<double>() { return DType::kF64; }
template <> DType dtype_of<std::int64_t>() { return DType::kI64; }
template <> DType dtype_of<std::uint8_t>() { return DType::kU8; }
template <> DType dtype_of<int>() { return DType::kI32; }

std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::kF32: return 4;
    case DType::kF64: return 8;
    case DType::kI64: return 8;
    case DType::kU8: return 1;
    case DType::kI32: return 4;
  }
  throw IoError("unknown dtype in batch file");
}

struct RawArray {
  DType dtype;
  std::vector<std::uint64_t> dims;
  std::vector<char> bytes;
};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("truncated batch file");
  return v;
}

template <typename T>
void write_array(std::ostream& os, const std::string& name, const T* data,
                 const std::vector<std::uint64_t>& dims) {
  put<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  put<std::uint8_t>(os, static_cast<std::uint8_t>(dtype_of<T>()));
  put<std::uint8_t>(os, static_cast<std::uint8_t>(dims.size()));
  std::uint64_t count = 1;
  for (auto d : dims) {
    put<std::uint64_t>(os, d);
    count *= d;
  }
  os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(T)));
}

template <typename T>
void write_vec(std::ostream& os, const std::string& name, const std::vector<T>& v) {
  write_array(os, name, v.data(), {v.size()});
}

template <typename T>
std::vector<T> take(std::map<std::string, RawArray>& arrays, const std::string& name) {
  const auto it = arrays.find(name);
  if (it == arrays.end()) throw IoError("batch file lacks array '" + name + "'");
  if (it->second.dtype != dtype_of<T>()) throw IoError("array '" + name + "' has wrong dtype");
  std::vector<T> out(it->second.bytes.size() / sizeof(T));
  std::memcpy(out.data(), it->second.bytes.data(), it->second.bytes.size());
  return out;
}

}  // namespace

void write_batch(const RolloutBatch& batch, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write batch file: " + path);
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, kBatchFormatVersion);
  put<std::uint32_t>(os, 12);

  const std::uint64_t n = batch.size();
  const std::uint64_t h = n ? static_cast<std::uint64_t>(batch.observations[0].height) : 0;
  const std::uint64_t w = n ? static_cast<std::uint64_t>(batch.observations[0].width) : 0;
  std::vector<float> pixels;
  pixels.reserve(n * h * w * 3);
  for (const auto& img : batch.observations) {
    if (static_cast<std::uint64_t>(img.height) != h || static_cast<std::uint64_t>(img.width) != w) {
      throw ShapeError("batch observations differ in shape");
    }
    pixels.insert(pixels.end(), img.pixels.begin(), img.pixels.end());
  }
  write_array(os, "observations", pixels.data(), {n, h, w, 3});
  write_vec(os, "actions", batch.actions);
  write_vec(os, "rewards", batch.rewards);
  write_vec(os, "values", batch.values);
  write_array(os, "action_dists", batch.action_dists.data(),
              {n, static_cast<std::uint64_t>(batch.n_actions)});
  write_vec(os, "dones", batch.dones);
  write_vec(os, "style_ids", batch.style_ids);
  write_vec(os, "advantages", batch.advantages);
  write_vec(os, "returns", batch.returns);
  write_vec(os, "last_values", batch.last_values);
  write_vec(os, "episode_returns", batch.episode_returns);
  const std::vector<std::int64_t> shape = {batch.n_envs, batch.n_steps};
  write_vec(os, "shape", shape);
  if (!os) throw IoError("failed writing batch file: " + path);
}

RolloutBatch read_batch(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open batch file: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError("not a rollout batch file: " + path);
  }
  const auto version = get<std::uint32_t>(is);
  if (version != kBatchFormatVersion) {
    throw IoError("unsupported batch format version " + std::to_string(version));
  }
  const auto count = get<std::uint32_t>(is);
  std::map<std::string, RawArray> arrays;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto len = get<std::uint16_t>(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    RawArray arr;
    arr.dtype = static_cast<DType>(get<std::uint8_t>(is));
    const auto rank = get<std::uint8_t>(is);
    std::uint64_t elems = 1;
    for (int r = 0; r < rank; ++r) {
      arr.dims.push_back(get<std::uint64_t>(is));
      elems *= arr.dims.back();
    }
    arr.bytes.resize(elems * dtype_size(arr.dtype));
    is.read(arr.bytes.data(), static_cast<std::streamsize>(arr.bytes.size()));
    if (!is) throw IoError("truncated batch file: " + path);
    arrays.emplace(std::move(name), std::move(arr));
  }

  RolloutBatch b;
  const auto shape = take<std::int64_t>(arrays, "shape");
  if (shape.size() != 2) throw IoError("bad shape array");
  b.n_envs = static_cast<int>(shape[0]);
  b.n_steps = static_cast<int>(shape[1]);
  const auto& obs_dims = arrays.at("observations").dims;
  const auto pixels = take<float>(arrays, "observations");
  const auto n = obs_dims.at(0);
  const int h = static_cast<int>(obs_dims.at(1));
  const int w = static_cast<int>(obs_dims.at(2));
  const std::size_t per = static_cast<std::size_t>(h) * w * 3;
  for (std::uint64_t i = 0; i < n; ++i) {
    Image img(h, w);
    std::copy(pixels.begin() + static_cast<std::ptrdiff_t>(i * per),
              pixels.begin() + static_cast<std::ptrdiff_t>((i + 1) * per), img.pixels.begin());
    b.observations.push_back(std::move(img));
  }
  b.actions = take<std::int64_t>(arrays, "actions");
  b.rewards = take<double>(arrays, "rewards");
  b.values = take<double>(arrays, "values");
  b.n_actions = static_cast<int>(arrays.at("action_dists").dims.at(1));
  b.action_dists = take<double>(arrays, "action_dists");
  b.dones = take<std::uint8_t>(arrays, "dones");
  b.style_ids = take<int>(arrays, "style_ids");
  b.advantages = take<double>(arrays, "advantages");
  b.returns = take<double>(arrays, "returns");
  b.last_values = take<double>(arrays, "last_values");
  b.episode_returns = take<double>(arrays, "episode_returns");
  b.validate();
  return b;
}

}  // namespace arpo
