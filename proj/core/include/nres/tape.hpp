#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nres/tensor.hpp"

namespace nres {

enum class Activation { kSilu, kGelu, kRelu, kSigmoid };

Activation activation_from_string(const std::string& name);
std::string to_string(Activation a);

// Handle to a node on a Tape.
struct Value {
  int32_t id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode autodiff tape over whole tensors. Nodes are recorded in
// execution order, which is a topological order by construction; backward()
// walks them once in reverse. A tape serves a single forward/backward pass
// and is confined to one thread.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  // Registers an input node. Gradients are only tracked for subgraphs that
  // reach a leaf with requires_grad; everything else skips adjoint work.
  Value leaf(Tensor value, bool requires_grad = true);
  Value constant(Tensor value) { return leaf(std::move(value), false); }

  // [m×k] @ [k×n] -> [m×n].
  Value matmul(Value a, Value b);
  // Elementwise; b may be a one-element tensor, broadcast over a.
  Value add(Value a, Value b);
  Value mul(Value a, Value b);
  Value scale(Value a, float s);
  Value activation(Activation kind, Value x);
  // Rows of x (over the trailing axis of extent d) scaled to unit RMS, then
  // by weight[d]: y = x / sqrt(mean(x^2) + eps) * weight.
  Value rms_norm(Value x, Value weight, float eps);
  // y[r, :] = x[r, :] * s[r]; s has one value per row of x.
  Value row_scale(Value x, Value s);
  // Gathers rows of table [V×d] at ids; backward scatter-adds.
  Value embedding(Value table, std::vector<int32_t> ids);
  // Multi-head scaled dot-product attention with a causal mask. q, k, v are
  // [batch*seq × d] with d split into n_heads equal slices; returns the same
  // shape. Softmax row sums accumulate in f64.
  Value causal_attention(Value q, Value k, Value v, int64_t batch, int64_t n_heads);
  // Mean over rows of -log softmax(logits)[target]; max-subtracted, f64 sums.
  Value softmax_cross_entropy(Value logits, std::vector<int32_t> targets);
  // Sum of |x[r, :]| over rows with mask[r] != 0; subgradient at 0 is 0.
  Value l1_masked_sum(Value x, std::vector<uint8_t> row_mask);
  // Sum of binary cross-entropy terms -(t*ln(p) + (1-t)*ln(1-p)) with p
  // clamped to [kBceEps, 1-kBceEps]; one probability and target per row.
  Value binary_ce_sum(Value p, std::vector<float> targets);

  static constexpr float kBceEps = 1e-7f;

  // Seeds d(root)/d(root) = 1 and accumulates adjoints into every
  // grad-requiring node reachable from root. One backward per tape.
  void backward(Value root);

  const Tensor& value(Value v) const;
  // Accumulated gradient; zeros for nodes the backward pass never reached.
  const Tensor& grad(Value v);
  bool requires_grad(Value v) const;
  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool grad_allocated = false;
    std::function<void(Tape&)> backprop;
  };

  std::vector<Node> nodes_;
  bool backward_done_ = false;

  int32_t push(Tensor value, bool requires_grad);
  Node& node_at(Value v);
  const Node& node_at(Value v) const;
  // Zero-initialized on first touch; the backward pass accumulates into it.
  Tensor& grad_buffer(Value v);
  const Tensor& grad_view(Value v) const;

  friend struct TapeOps;
};

}  // namespace nres
