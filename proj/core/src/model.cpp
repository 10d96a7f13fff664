#include "nres/model.hpp"

#include <cmath>
#include <numeric>

#include "nres/errors.hpp"

namespace nres {

void validate(const ModelConfig& cfg) {
  if (cfg.n_layers < 1) throw ConfigError("model: n_layers must be positive");
  if (cfg.model_dim < 1) throw ConfigError("model: model_dim must be positive");
  if (cfg.n_heads < 1 || cfg.model_dim % cfg.n_heads != 0) {
    throw ConfigError("model: n_heads must divide model_dim (" + std::to_string(cfg.n_heads) +
                      " vs " + std::to_string(cfg.model_dim) + ")");
  }
  if (cfg.ffn_latent < 1) throw ConfigError("model: ffn_latent must be positive");
  if (cfg.vocab_size < 2) throw ConfigError("model: vocab_size must be at least 2");
  if (cfg.max_seq_len < 1) throw ConfigError("model: max_seq_len must be positive");
  if (!(cfg.norm_eps > 0.0f)) throw ConfigError("model: norm_eps must be positive");
}

Tensor he_init(std::vector<int64_t> shape, int64_t fan_in, Rng& rng) {
  if (fan_in <= 0) throw ConfigError("he_init: fan_in must be positive");
  Tensor t(std::move(shape));
  double sigma = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (int64_t i = 0; i < t.numel(); ++i) {
    t.data()[i] = static_cast<float>(sigma * rng.normal());
  }
  return t;
}

BackboneModel init_backbone(const ModelConfig& cfg, uint64_t seed) {
  validate(cfg);
  Rng rng(seed);
  int64_t d = cfg.model_dim;
  BackboneModel m;
  m.config = cfg;
  m.tok_embed = he_init({cfg.vocab_size, d}, d, rng);
  m.pos_embed = he_init({cfg.max_seq_len, d}, d, rng);
  m.layers.resize(static_cast<size_t>(cfg.n_layers));
  for (auto& layer : m.layers) {
    layer.norm_attn = Tensor::full({d}, 1.0f);
    layer.attn.wq = he_init({d, d}, d, rng);
    layer.attn.wk = he_init({d, d}, d, rng);
    layer.attn.wv = he_init({d, d}, d, rng);
    layer.attn.wo = he_init({d, d}, d, rng);
    layer.norm_ffn = Tensor::full({d}, 1.0f);
    layer.ffn.w_in = he_init({d, cfg.ffn_latent}, d, rng);
    layer.ffn.w_gate = he_init({d, cfg.ffn_latent}, d, rng);
    layer.ffn.w_out = he_init({cfg.ffn_latent, d}, cfg.ffn_latent, rng);
  }
  m.norm_final = Tensor::full({d}, 1.0f);
  m.head = he_init({d, cfg.vocab_size}, d, rng);
  return m;
}

ParamCounts count_params(const ModelConfig& cfg) {
  ParamCounts c;
  int64_t d = cfg.model_dim;
  c.embedding = cfg.vocab_size * d;
  c.positional = cfg.max_seq_len * d;
  c.per_layer = 4 * d * d                    // attention projections
                + 2 * d * cfg.ffn_latent     // W_i, W_g
                + cfg.ffn_latent * d         // W_o
                + 2 * d;                     // two norms
  c.final_norm = d;
  c.head = d * cfg.vocab_size;
  c.total = c.embedding + c.positional + cfg.n_layers * c.per_layer + c.final_norm + c.head;
  return c;
}

int64_t param_count(const BackboneModel& model) {
  int64_t total = 0;
  visit_params(model, [&](const std::string&, const Tensor& t) { total += t.numel(); });
  return total;
}

BoundBackbone bind_backbone(Tape& tape, const BackboneModel& model, bool trainable,
                            std::vector<Value>* leaves) {
  // Leaves are created in visit_params order so optimizer state, checkpoint
  // records, and gradient reads all line up; the pairing is covered by tests.
  std::vector<Value> vals;
  visit_params(model, [&](const std::string&, const Tensor& t) {
    vals.push_back(tape.leaf(t, trainable));
  });
  if (leaves) leaves->insert(leaves->end(), vals.begin(), vals.end());

  BoundBackbone b;
  b.config = model.config;
  size_t idx = 0;
  auto next = [&]() { return vals[idx++]; };
  b.tok_embed = next();
  b.pos_embed = next();
  b.layers.resize(model.layers.size());
  for (auto& layer : b.layers) {
    layer.norm_attn = next();
    layer.attn.wq = next();
    layer.attn.wk = next();
    layer.attn.wv = next();
    layer.attn.wo = next();
    layer.norm_ffn = next();
    layer.ffn.w_in = next();
    layer.ffn.w_gate = next();
    layer.ffn.w_out = next();
  }
  b.norm_final = next();
  b.head = next();
  return b;
}

LmIo make_lm_io(const TokenBatch& windows) {
  if (windows.batch < 1 || windows.seq < 2) {
    throw ContractError("make_lm_io: need windows of at least 2 tokens, got seq " +
                        std::to_string(windows.seq));
  }
  if (static_cast<int64_t>(windows.tokens.size()) != windows.batch * windows.seq) {
    throw DimensionError("make_lm_io: token count " + std::to_string(windows.tokens.size()) +
                         " does not match batch " + std::to_string(windows.batch) + " x seq " +
                         std::to_string(windows.seq));
  }
  LmIo io;
  int64_t t = windows.seq - 1;
  io.inputs.batch = windows.batch;
  io.inputs.seq = t;
  io.inputs.tokens.reserve(static_cast<size_t>(windows.batch * t));
  io.targets.reserve(static_cast<size_t>(windows.batch * t));
  for (int64_t b = 0; b < windows.batch; ++b) {
    const int32_t* row = windows.tokens.data() + b * windows.seq;
    io.inputs.tokens.insert(io.inputs.tokens.end(), row, row + t);
    io.targets.insert(io.targets.end(), row + 1, row + 1 + t);
  }
  return io;
}

Value glu_ffn(Tape& tape, Value x, Value w_in, Value w_gate, Value w_out, Activation act) {
  Value up = tape.matmul(x, w_in);
  Value gate = tape.activation(act, tape.matmul(x, w_gate));
  return tape.matmul(tape.mul(gate, up), w_out);
}

Value mha(Tape& tape, const BoundAttention& attn, Value x_norm, int64_t batch, int64_t n_heads,
          int64_t max_seq_len) {
  const Tensor& x = tape.value(x_norm);
  int64_t seq = x.rows() / batch;
  if (seq > max_seq_len) {
    throw ConfigError("mha: sequence length " + std::to_string(seq) + " exceeds max_seq_len " +
                      std::to_string(max_seq_len));
  }
  Value q = tape.matmul(x_norm, attn.wq);
  Value k = tape.matmul(x_norm, attn.wk);
  Value v = tape.matmul(x_norm, attn.wv);
  Value ctx = tape.causal_attention(q, k, v, batch, n_heads);
  return tape.matmul(ctx, attn.wo);
}

Value embed_tokens(Tape& tape, const BoundBackbone& model, const TokenBatch& inputs) {
  if (inputs.batch < 1 || inputs.seq < 1) {
    throw ContractError("embed_tokens: empty batch");
  }
  if (static_cast<int64_t>(inputs.tokens.size()) != inputs.batch * inputs.seq) {
    throw DimensionError("embed_tokens: token count " + std::to_string(inputs.tokens.size()) +
                         " does not match batch " + std::to_string(inputs.batch) + " x seq " +
                         std::to_string(inputs.seq));
  }
  if (inputs.seq > model.config.max_seq_len) {
    throw ConfigError("embed_tokens: sequence length " + std::to_string(inputs.seq) +
                      " exceeds max_seq_len " + std::to_string(model.config.max_seq_len));
  }
  Value tok = tape.embedding(model.tok_embed, inputs.tokens);
  std::vector<int32_t> positions(static_cast<size_t>(inputs.batch * inputs.seq));
  for (int64_t b = 0; b < inputs.batch; ++b) {
    for (int64_t t = 0; t < inputs.seq; ++t) {
      positions[static_cast<size_t>(b * inputs.seq + t)] = static_cast<int32_t>(t);
    }
  }
  Value pos = tape.embedding(model.pos_embed, std::move(positions));
  return tape.add(tok, pos);
}

Value attention_residual(Tape& tape, const BoundBackbone& model, const BoundLayer& layer, Value x,
                         int64_t batch) {
  Value xn = tape.rms_norm(x, layer.norm_attn, model.config.norm_eps);
  Value out = mha(tape, layer.attn, xn, batch, model.config.n_heads, model.config.max_seq_len);
  return tape.add(x, out);
}

Value head_logits(Tape& tape, const BoundBackbone& model, Value x) {
  Value xn = tape.rms_norm(x, model.norm_final, model.config.norm_eps);
  return tape.matmul(xn, model.head);
}

Value forward_lm(Tape& tape, const BoundBackbone& model, const TokenBatch& inputs) {
  Value x = embed_tokens(tape, model, inputs);
  for (const auto& layer : model.layers) {
    x = attention_residual(tape, model, layer, x, inputs.batch);
    Value hn = tape.rms_norm(x, layer.norm_ffn, model.config.norm_eps);
    Value f = glu_ffn(tape, hn, layer.ffn.w_in, layer.ffn.w_gate, layer.ffn.w_out,
                      model.config.activation);
    x = tape.add(x, f);
  }
  return head_logits(tape, model, x);
}

Tensor forward_logits(const BackboneModel& model, const TokenBatch& inputs) {
  Tape tape;
  BoundBackbone bound = bind_backbone(tape, model, /*trainable=*/false);
  Value logits = forward_lm(tape, bound, inputs);
  return tape.value(logits);
}

}  // namespace nres
