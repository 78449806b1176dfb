#pragma once

#include <map>
#include <string>

#include "json.hpp"
#include "qareid/tensor.hpp"

namespace qareid {

// On-disk snapshot: a JSON metadata blob plus named double tensors. The
// binary layout is magic, meta length + bytes, tensor count, then per tensor
// name, rank, dims and raw little-endian doubles.
struct Checkpoint {
  nlohmann::json meta;
  std::map<std::string, Tensor> tensors;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace qareid
