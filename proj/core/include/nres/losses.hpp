#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "nres/domain.hpp"
#include "nres/extension.hpp"
#include "nres/tape.hpp"

namespace nres {

// Expands per-sequence flags to one entry per token row: 1 where the row
// belongs to an original-domain sequence.
std::vector<uint8_t> original_row_mask(const DomainMask& mask, int64_t tokens_per_seq);
// Per-token gate targets: 0 for original rows, 1 for new rows.
std::vector<float> gate_targets(const DomainMask& mask, int64_t tokens_per_seq);

// Mean over {layers x original-domain tokens} of |y|_1 / d. Returns a
// constant 0 (no gradient edges) when the batch has no original sequence,
// so an all-new batch provably leaves adapter gradients untouched.
Value l1_local_loss(Tape& tape, const std::vector<Value>& adapter_ys, const DomainMask& mask,
                    int64_t tokens_per_seq, int64_t model_dim);

// Binary cross-entropy of the sigmoid gates against the domain targets,
// averaged over all layers and tokens of both domains.
Value gate_ce_loss(Tape& tape, const std::vector<Value>& gates, const DomainMask& mask,
                   int64_t tokens_per_seq, GateKind gate);

struct LossBreakdown {
  float lm = 0.0f;
  float local_l1 = 0.0f;
  float local_ce = 0.0f;
  float total = 0.0f;
  Value total_node;  // lm + alpha * (l1 + ce); backward target
};

// total = lm + alpha * (local_l1 + local_ce), absent terms contributing 0.
LossBreakdown combine(Tape& tape, Value lm, std::optional<Value> local_l1,
                      std::optional<Value> local_ce, float alpha);

}  // namespace nres
