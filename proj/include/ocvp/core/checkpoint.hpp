// SPDX-License-Identifier: Apache-2.0
//
// Versioned binary container for named weight arrays plus key-value metadata.
// Layout (all integers little-endian):
//   magic "OCKP" | u16 version | u32 meta_len | meta (canonical kv text)
//   u32 n_arrays | per array: u16 name_len | name | u8 rank | u32 dims... | f64 data...
// Arrays are stored as f64 regardless of the in-memory scalar type.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ocvp/core/kv.hpp"

namespace ocvp::core {

struct NamedArray {
  std::vector<int64_t> shape;
  std::vector<double> data;
};

struct Checkpoint {
  KvMap meta;
  std::map<std::string, NamedArray> arrays;
};

/// Atomic write (temp file + rename), so an interrupted save leaves no
/// partial artifact behind.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace ocvp::core
