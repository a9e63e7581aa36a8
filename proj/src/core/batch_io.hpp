#pragma once

#include <string>

#include "core/rollout.hpp"

namespace arpo {

// Rollout batches are stored in a small named-array container:
//
//   magic "ARPOBAT\0" | u32 version | u32 array count
//   per array: u16 name length | name | u8 dtype | u8 rank | u64 dims[rank] | data
//
// dtype: 0 = f32, 1 = f64, 2 = i64, 3 = u8, 4 = i32. All values little-endian.
// Arrays: observations f32[N,H,W,3], actions i64[N], rewards f64[N],
// values f64[N], action_dists f64[N,A], dones u8[N], style_ids i32[N],
// advantages f64[N], returns f64[N], last_values f64[E],
// episode_returns f64[K], shape i64[2] = (n_envs, n_steps).
inline constexpr unsigned kBatchFormatVersion = 1;

void write_batch(const RolloutBatch& batch, const std::string& path);
RolloutBatch read_batch(const std::string& path);

}  // namespace arpo
