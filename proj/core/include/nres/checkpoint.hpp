#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nres/extension.hpp"
#include "nres/model.hpp"
#include "nres/tensor.hpp"

namespace nres {

// On-disk model snapshot. Binary layout (all integers little-endian):
//   magic "NRES" | version u32 = 1 | tensor count u32 |
//   per tensor: name length u32, name bytes, ndim u32, dims u64[ndim],
//               dtype byte (0 = f32), raw f32 payload |
//   JSON length u32, JSON bytes (configs and step).
struct Checkpoint {
  std::vector<std::pair<std::string, Tensor>> tensors;  // insertion-ordered
  std::optional<ModelConfig> model_config;
  std::optional<ExtensionConfig> extension_config;
  int64_t step = 0;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
// Malformed input (bad magic, unknown version or dtype, truncation, broken
// JSON) raises a format error naming the byte offset; nothing partial
// escapes.
Checkpoint load_checkpoint(const std::string& path);

Checkpoint make_checkpoint(const BackboneModel& model, int64_t step);
Checkpoint make_checkpoint(const ExtendedModel& model, int64_t step);

// Rebuild models from a snapshot; every expected parameter must be present
// with the right shape, and no extras are tolerated.
BackboneModel backbone_from_checkpoint(const Checkpoint& ckpt);
ExtendedModel extended_from_checkpoint(const Checkpoint& ckpt);

}  // namespace nres
