#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nres/rng.hpp"
#include "nres/tape.hpp"
#include "nres/tensor.hpp"

namespace nres {

struct ModelConfig {
  int64_t n_layers = 2;
  int64_t model_dim = 64;
  int64_t n_heads = 4;
  int64_t ffn_latent = 176;
  int64_t vocab_size = 256;
  Activation activation = Activation::kSilu;  // backbone and adapter nonlinearity
  int64_t max_seq_len = 128;
  float norm_eps = 1e-5f;
};

void validate(const ModelConfig& cfg);

struct AttentionWeights {
  Tensor wq, wk, wv, wo;  // each [d × d]
};

struct FfnWeights {
  Tensor w_in, w_gate;  // [d × ffn_latent]
  Tensor w_out;         // [ffn_latent × d]
};

struct LayerWeights {
  Tensor norm_attn, norm_ffn;  // [d]
  AttentionWeights attn;
  FfnWeights ffn;
};

// Decoder-only transformer LM: learned absolute position embeddings, RMS
// pre-norm, causal multi-head attention, GLU feed-forward, untied head.
struct BackboneModel {
  ModelConfig config;
  Tensor tok_embed;  // [V × d]
  Tensor pos_embed;  // [max_seq_len × d]
  std::vector<LayerWeights> layers;
  Tensor norm_final;  // [d]
  Tensor head;        // [d × V]
};

// Samples from N(0, 2/fan_in).
Tensor he_init(std::vector<int64_t> shape, int64_t fan_in, Rng& rng);

BackboneModel init_backbone(const ModelConfig& cfg, uint64_t seed);

struct ParamCounts {
  int64_t embedding = 0;
  int64_t positional = 0;
  int64_t per_layer = 0;
  int64_t final_norm = 0;
  int64_t head = 0;
  int64_t total = 0;
};

// Closed-form parameter count; a pure function of the config.
ParamCounts count_params(const ModelConfig& cfg);
int64_t param_count(const BackboneModel& model);

// Stable traversal order shared by binding, checkpointing, and the optimizer.
template <typename BackboneT, typename Fn>
void visit_params(BackboneT& m, Fn&& fn) {
  fn("tok_embed", m.tok_embed);
  fn("pos_embed", m.pos_embed);
  for (size_t i = 0; i < m.layers.size(); ++i) {
    auto& layer = m.layers[i];
    std::string p = "layers." + std::to_string(i) + ".";
    fn(p + "norm_attn", layer.norm_attn);
    fn(p + "attn.wq", layer.attn.wq);
    fn(p + "attn.wk", layer.attn.wk);
    fn(p + "attn.wv", layer.attn.wv);
    fn(p + "attn.wo", layer.attn.wo);
    fn(p + "norm_ffn", layer.norm_ffn);
    fn(p + "ffn.w_in", layer.ffn.w_in);
    fn(p + "ffn.w_gate", layer.ffn.w_gate);
    fn(p + "ffn.w_out", layer.ffn.w_out);
  }
  fn("norm_final", m.norm_final);
  fn("head", m.head);
}

struct BoundAttention {
  Value wq, wk, wv, wo;
};

struct BoundFfn {
  Value w_in, w_gate, w_out;
};

struct BoundLayer {
  Value norm_attn, norm_ffn;
  BoundAttention attn;
  BoundFfn ffn;
};

struct BoundBackbone {
  ModelConfig config;
  Value tok_embed, pos_embed;
  std::vector<BoundLayer> layers;
  Value norm_final, head;
};

// Registers every parameter as a tape leaf (requires_grad = trainable). If
// leaves is given, it receives the leaf handles in visit_params order.
BoundBackbone bind_backbone(Tape& tape, const BackboneModel& model, bool trainable,
                            std::vector<Value>* leaves = nullptr);

struct TokenBatch {
  int64_t batch = 0;
  int64_t seq = 0;
  std::vector<int32_t> tokens;  // row-major [batch × seq]
};

struct LmIo {
  TokenBatch inputs;             // [batch × (seq-1)]
  std::vector<int32_t> targets;  // next tokens, flattened, length batch·(seq-1)
};

// Splits windows into model inputs (all but the last token of each window)
// and next-token targets.
LmIo make_lm_io(const TokenBatch& windows);

// FFN(x) = (act(x W_g) ⊙ (x W_i)) W_o, per token.
Value glu_ffn(Tape& tape, Value x, Value w_in, Value w_gate, Value w_out, Activation act);

// Causal multi-head attention over normalized input, with output projection.
Value mha(Tape& tape, const BoundAttention& attn, Value x_norm, int64_t batch, int64_t n_heads,
          int64_t max_seq_len);

// Token + position embeddings for the batch.
Value embed_tokens(Tape& tape, const BoundBackbone& model, const TokenBatch& inputs);
// x + MHA(rms_norm(x)).
Value attention_residual(Tape& tape, const BoundBackbone& model, const BoundLayer& layer, Value x,
                         int64_t batch);
// Final RMS norm followed by the output head.
Value head_logits(Tape& tape, const BoundBackbone& model, Value x);

// Full forward pass: logits [batch·seq × V].
Value forward_lm(Tape& tape, const BoundBackbone& model, const TokenBatch& inputs);

// Convenience non-training forward: builds a private tape, returns logits.
Tensor forward_logits(const BackboneModel& model, const TokenBatch& inputs);

}  // namespace nres
