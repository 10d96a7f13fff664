#include "nres/losses.hpp"

#include "nres/errors.hpp"

namespace nres {

namespace {

void check_rows(const Tape& tape, const std::vector<Value>& vals, int64_t expect,
                const char* what) {
  for (const Value& v : vals) {
    int64_t rows = tape.value(v).rows();
    if (rows != expect) {
      throw DimensionError(std::string(what) + ": expected " + std::to_string(expect) +
                           " token rows, got " + std::to_string(rows));
    }
  }
}

}  // namespace

std::vector<uint8_t> original_row_mask(const DomainMask& mask, int64_t tokens_per_seq) {
  if (tokens_per_seq < 1) throw DimensionError("original_row_mask: tokens_per_seq must be >= 1");
  std::vector<uint8_t> rows;
  rows.reserve(mask.size() * static_cast<size_t>(tokens_per_seq));
  for (Domain d : mask) {
    uint8_t flag = d == Domain::kOriginal ? 1 : 0;
    rows.insert(rows.end(), static_cast<size_t>(tokens_per_seq), flag);
  }
  return rows;
}

std::vector<float> gate_targets(const DomainMask& mask, int64_t tokens_per_seq) {
  if (tokens_per_seq < 1) throw DimensionError("gate_targets: tokens_per_seq must be >= 1");
  std::vector<float> t;
  t.reserve(mask.size() * static_cast<size_t>(tokens_per_seq));
  for (Domain d : mask) {
    t.insert(t.end(), static_cast<size_t>(tokens_per_seq),
             d == Domain::kNew ? 1.0f : 0.0f);
  }
  return t;
}

Value l1_local_loss(Tape& tape, const std::vector<Value>& adapter_ys, const DomainMask& mask,
                    int64_t tokens_per_seq, int64_t model_dim) {
  if (model_dim < 1) throw DimensionError("l1_local_loss: model_dim must be >= 1");
  int64_t n_orig_seqs = 0;
  for (Domain d : mask) n_orig_seqs += d == Domain::kOriginal ? 1 : 0;
  if (adapter_ys.empty() || n_orig_seqs == 0) {
    // Constant zero: no edges to any parameter, so gradients are exactly 0.
    return tape.constant(Tensor::scalar(0.0f));
  }

  int64_t rows = static_cast<int64_t>(mask.size()) * tokens_per_seq;
  check_rows(tape, adapter_ys, rows, "l1_local_loss");
  std::vector<uint8_t> row_mask = original_row_mask(mask, tokens_per_seq);

  Value sum;
  bool first = true;
  for (const Value& y : adapter_ys) {
    Value s = tape.l1_masked_sum(y, row_mask);
    sum = first ? s : tape.add(sum, s);
    first = false;
  }
  double denom = static_cast<double>(model_dim) * static_cast<double>(adapter_ys.size()) *
                 static_cast<double>(n_orig_seqs * tokens_per_seq);
  return tape.scale(sum, static_cast<float>(1.0 / denom));
}

Value gate_ce_loss(Tape& tape, const std::vector<Value>& gates, const DomainMask& mask,
                   int64_t tokens_per_seq, GateKind gate) {
  if (gate != GateKind::kSigmoid) {
    throw ConfigError("gate_ce_loss: requires gate=sigmoid, got " + to_string(gate));
  }
  if (gates.empty()) throw ConfigError("gate_ce_loss: no gate values supplied");

  int64_t rows = static_cast<int64_t>(mask.size()) * tokens_per_seq;
  check_rows(tape, gates, rows, "gate_ce_loss");
  std::vector<float> targets = gate_targets(mask, tokens_per_seq);

  Value sum;
  bool first = true;
  for (const Value& g : gates) {
    Value s = tape.binary_ce_sum(g, targets);
    sum = first ? s : tape.add(sum, s);
    first = false;
  }
  double denom = static_cast<double>(gates.size()) * static_cast<double>(rows);
  return tape.scale(sum, static_cast<float>(1.0 / denom));
}

LossBreakdown combine(Tape& tape, Value lm, std::optional<Value> local_l1,
                      std::optional<Value> local_ce, float alpha) {
  if (!(alpha >= 0.0f)) throw ConfigError("combine: alpha must be >= 0");
  LossBreakdown out;
  out.lm = tape.value(lm).data()[0];

  std::optional<Value> local;
  if (local_l1) {
    out.local_l1 = tape.value(*local_l1).data()[0];
    local = *local_l1;
  }
  if (local_ce) {
    out.local_ce = tape.value(*local_ce).data()[0];
    local = local ? tape.add(*local, *local_ce) : *local_ce;
  }

  out.total_node = local ? tape.add(lm, tape.scale(*local, alpha)) : lm;
  out.total = tape.value(out.total_node).data()[0];
  return out;
}

}  // namespace nres
