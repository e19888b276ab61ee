#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "treelm/tensor.hpp"

namespace treelm {

// Versioned binary container for a training snapshot: run configuration
// (opaque JSON), step counter, named parameter arrays and, optionally,
// Adam moment estimates in parameter order. Raw little-endian IEEE bytes,
// so save -> load -> forward is bit-identical.
template <typename T>
struct Checkpoint {
  uint32_t version = 1;
  std::string config_json;
  uint64_t step = 0;
  std::vector<std::pair<std::string, Array<T>>> params;
  bool has_optimizer = false;
  int64_t adam_t = 0;
  std::vector<Array<T>> adam_m;
  std::vector<Array<T>> adam_v;
};

template <typename T>
void save_checkpoint(const Checkpoint<T>& ckpt, const std::string& path);

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path);

}  // namespace treelm
