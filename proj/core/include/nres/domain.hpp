#pragma once

#include <cstdint>
#include <vector>

namespace nres {

// Which distribution a whole sequence was drawn from. The numeric values
// double as the gate-classifier targets: original wants the gate closed (0),
// new wants it open (1).
enum class Domain : uint8_t { kOriginal = 0, kNew = 1 };

// One flag per sequence in a batch.
using DomainMask = std::vector<Domain>;

}  // namespace nres
