#include "nres/extension.hpp"

#include <cmath>
#include <utility>

#include "nres/errors.hpp"

namespace nres {

Method method_from_string(const std::string& name) {
  if (name == "finetune") return Method::kFinetune;
  if (name == "lora") return Method::kLora;
  if (name == "adapter") return Method::kAdapter;
  throw ConfigError("unknown method '" + name + "' (expected finetune|lora|adapter)");
}

GateKind gate_from_string(const std::string& name) {
  if (name == "none") return GateKind::kNone;
  if (name == "sigmoid") return GateKind::kSigmoid;
  if (name == "relu") return GateKind::kRelu;
  throw ConfigError("unknown gate '" + name + "' (expected none|sigmoid|relu)");
}

InitScheme init_scheme_from_string(const std::string& name) {
  if (name == "he") return InitScheme::kHe;
  if (name == "low_variance") return InitScheme::kLowVariance;
  throw ConfigError("unknown init scheme '" + name + "' (expected he|low_variance)");
}

std::string to_string(Method m) {
  switch (m) {
    case Method::kFinetune: return "finetune";
    case Method::kLora: return "lora";
    case Method::kAdapter: return "adapter";
  }
  return "?";
}

std::string to_string(GateKind g) {
  switch (g) {
    case GateKind::kNone: return "none";
    case GateKind::kSigmoid: return "sigmoid";
    case GateKind::kRelu: return "relu";
  }
  return "?";
}

std::string to_string(InitScheme s) {
  switch (s) {
    case InitScheme::kHe: return "he";
    case InitScheme::kLowVariance: return "low_variance";
  }
  return "?";
}

void validate(const ExtensionConfig& cfg) {
  if (!(cfg.alpha >= 0.0f)) throw ConfigError("extension: alpha must be >= 0");
  if (!(cfg.budget_fraction > 0.0f) || cfg.budget_fraction > 1.0f) {
    throw ConfigError("extension: budget_fraction must be in (0, 1]");
  }
  if (cfg.method == Method::kFinetune) {
    if (cfg.gate != GateKind::kNone) {
      throw ConfigError("extension: finetune admits no gate (got gate=" + to_string(cfg.gate) +
                        ")");
    }
    if (cfg.use_l1_loss || cfg.use_ce_loss) {
      throw ConfigError("extension: finetune admits no local losses");
    }
  }
  if (cfg.use_ce_loss && cfg.gate != GateKind::kSigmoid) {
    throw ConfigError("extension: the CE loss supervises a probability and requires gate=sigmoid");
  }
  if (cfg.method != Method::kAdapter) {
    if (cfg.gate != GateKind::kNone) {
      throw ConfigError("extension: gates exist only on method=adapter");
    }
    if (cfg.use_l1_loss || cfg.use_ce_loss) {
      throw ConfigError("extension: local losses exist only on method=adapter");
    }
  }
}

int64_t adapter_latent(const ModelConfig& cfg, float budget_fraction) {
  int64_t p = count_params(cfg).total;
  int64_t d = cfg.model_dim;
  int64_t l = cfg.n_layers;
  // Per layer the adapter spends 3dh weights plus d + 1 for the gate.
  double per_layer = static_cast<double>(budget_fraction) * static_cast<double>(p) /
                     static_cast<double>(l);
  int64_t h = static_cast<int64_t>(std::floor((per_layer - static_cast<double>(d) - 1.0) /
                                              (3.0 * static_cast<double>(d))));
  if (h < 1) {
    throw ConfigError("extension: budget_fraction " + std::to_string(budget_fraction) +
                      " is too small for an adapter bottleneck of at least 1");
  }
  return h;
}

int64_t lora_rank(const ModelConfig& cfg, float budget_fraction) {
  int64_t p = count_params(cfg).total;
  int64_t d = cfg.model_dim;
  // Each of the three FFN matrices gets B [in × r] + A [r × out], and
  // in + out = d + ffn_latent for all of them.
  double per_rank = 3.0 * static_cast<double>(cfg.n_layers) *
                    static_cast<double>(d + cfg.ffn_latent);
  int64_t r = static_cast<int64_t>(
      std::floor(static_cast<double>(budget_fraction) * static_cast<double>(p) / per_rank));
  if (r < 1) {
    throw ConfigError("extension: budget_fraction " + std::to_string(budget_fraction) +
                      " is too small for a low-rank delta of rank at least 1");
  }
  return r;
}

namespace {

Tensor gaussian(std::vector<int64_t> shape, double variance, Rng& rng) {
  Tensor t(std::move(shape));
  double sigma = std::sqrt(variance);
  for (int64_t i = 0; i < t.numel(); ++i) {
    t.data()[i] = static_cast<float>(sigma * rng.normal());
  }
  return t;
}

}  // namespace

ExtendedModel attach_adapters(BackboneModel backbone, const ExtensionConfig& cfg, uint64_t seed) {
  validate(cfg);
  if (cfg.method != Method::kAdapter) {
    throw ConfigError("attach_adapters: config method is " + to_string(cfg.method));
  }
  const ModelConfig& mc = backbone.config;
  int64_t d = mc.model_dim;
  int64_t h = adapter_latent(mc, cfg.budget_fraction);
  Rng rng(seed);

  ExtendedModel m;
  m.backbone = std::move(backbone);
  m.config = cfg;
  m.adapters.resize(static_cast<size_t>(mc.n_layers));
  for (auto& a : m.adapters) {
    a.gate = cfg.gate;
    if (cfg.init_scheme == InitScheme::kLowVariance) {
      double var = 1.0 / (static_cast<double>(d) * static_cast<double>(mc.n_layers));
      a.a_in = gaussian({d, h}, var, rng);
      a.a_gate = gaussian({d, h}, var, rng);
      a.gate_u = gaussian({d, 1}, var, rng);
    } else {
      a.a_in = he_init({d, h}, d, rng);
      a.a_gate = he_init({d, h}, d, rng);
      a.gate_u = he_init({d, 1}, d, rng);
    }
    // Both schemes zero the output matrix, so a fresh adapter adds nothing.
    a.a_out = Tensor::zeros({h, d});
    a.gate_b = Tensor::zeros({1});
  }
  return m;
}

ExtendedModel attach_lora(BackboneModel backbone, const ExtensionConfig& cfg, uint64_t seed) {
  validate(cfg);
  if (cfg.method != Method::kLora) {
    throw ConfigError("attach_lora: config method is " + to_string(cfg.method));
  }
  const ModelConfig& mc = backbone.config;
  int64_t d = mc.model_dim;
  int64_t f = mc.ffn_latent;
  int64_t r = lora_rank(mc, cfg.budget_fraction);
  Rng rng(seed);

  ExtendedModel m;
  m.backbone = std::move(backbone);
  m.config = cfg;
  m.lora.resize(static_cast<size_t>(mc.n_layers));
  auto make_pair = [&](int64_t in, int64_t out) {
    LoraPair p;
    p.b = Tensor::zeros({in, r});  // zero side keeps the delta at 0 initially
    p.a = he_init({r, out}, r, rng);
    return p;
  };
  for (auto& layer : m.lora) {
    layer.in = make_pair(d, f);
    layer.gate = make_pair(d, f);
    layer.out = make_pair(f, d);
  }
  return m;
}

ExtendedModel attach_extension(BackboneModel backbone, const ExtensionConfig& cfg, uint64_t seed) {
  validate(cfg);
  switch (cfg.method) {
    case Method::kFinetune: {
      ExtendedModel m;
      m.backbone = std::move(backbone);
      m.config = cfg;
      return m;
    }
    case Method::kLora: return attach_lora(std::move(backbone), cfg, seed);
    case Method::kAdapter: return attach_adapters(std::move(backbone), cfg, seed);
  }
  throw ConfigError("attach_extension: bad method");
}

namespace {

// Extension-state traversal; order must stay stable across releases because
// checkpoints and optimizer state index it.
template <typename Fn>
void visit_extension_params(ExtendedModel& m, Fn&& fn) {
  for (size_t i = 0; i < m.adapters.size(); ++i) {
    auto& a = m.adapters[i];
    std::string p = "adapters." + std::to_string(i) + ".";
    fn(p + "a_in", a.a_in);
    fn(p + "a_gate", a.a_gate);
    fn(p + "a_out", a.a_out);
    fn(p + "gate_u", a.gate_u);
    fn(p + "gate_b", a.gate_b);
  }
  for (size_t i = 0; i < m.lora.size(); ++i) {
    auto& l = m.lora[i];
    std::string p = "lora." + std::to_string(i) + ".";
    fn(p + "in.b", l.in.b);
    fn(p + "in.a", l.in.a);
    fn(p + "gate.b", l.gate.b);
    fn(p + "gate.a", l.gate.a);
    fn(p + "out.b", l.out.b);
    fn(p + "out.a", l.out.a);
  }
}

}  // namespace

std::vector<ParamRef> all_parameters(ExtendedModel& model) {
  std::vector<ParamRef> out;
  visit_params(model.backbone, [&](const std::string& n, Tensor& t) {
    out.push_back({n, &t});
  });
  visit_extension_params(model, [&](const std::string& n, Tensor& t) {
    out.push_back({n, &t});
  });
  return out;
}

std::vector<ParamRef> trainable_parameters(ExtendedModel& model) {
  std::vector<ParamRef> out;
  if (model.config.method == Method::kFinetune) {
    visit_params(model.backbone, [&](const std::string& n, Tensor& t) {
      out.push_back({n, &t});
    });
  } else {
    visit_extension_params(model, [&](const std::string& n, Tensor& t) {
      out.push_back({n, &t});
    });
  }
  return out;
}

int64_t param_count(const ExtendedModel& model, bool trainable_only) {
  auto& m = const_cast<ExtendedModel&>(model);  // traversal only reads
  int64_t total = 0;
  auto refs = trainable_only ? trainable_parameters(m) : all_parameters(m);
  for (const auto& r : refs) total += r.tensor->numel();
  return total;
}

BoundExtended bind_extended(Tape& tape, const ExtendedModel& model, bool training,
                            std::vector<Value>* leaves) {
  bool backbone_trainable = training && model.config.method == Method::kFinetune;
  bool ext_trainable = training;

  BoundExtended b;
  b.config = model.config;
  b.backbone = bind_backbone(tape, model.backbone, backbone_trainable,
                             backbone_trainable ? leaves : nullptr);

  std::vector<Value> ext_vals;
  auto& m = const_cast<ExtendedModel&>(model);
  visit_extension_params(m, [&](const std::string&, Tensor& t) {
    Value v = tape.leaf(t, ext_trainable);
    ext_vals.push_back(v);
  });
  if (leaves && ext_trainable && model.config.method != Method::kFinetune) {
    leaves->insert(leaves->end(), ext_vals.begin(), ext_vals.end());
  }

  size_t idx = 0;
  auto next = [&]() { return ext_vals[idx++]; };
  b.adapters.resize(model.adapters.size());
  for (auto& a : b.adapters) {
    a.a_in = next();
    a.a_gate = next();
    a.a_out = next();
    a.gate_u = next();
    a.gate_b = next();
  }
  b.lora.resize(model.lora.size());
  for (auto& l : b.lora) {
    l.in.b = next();
    l.in.a = next();
    l.gate.b = next();
    l.gate.a = next();
    l.out.b = next();
    l.out.a = next();
  }
  return b;
}

AdapterOut adapter_forward(Tape& tape, const BoundAdapter& adapter, Value x_norm, Activation act,
                           GateKind gate) {
  Value core = glu_ffn(tape, x_norm, adapter.a_in, adapter.a_gate, adapter.a_out, act);
  AdapterOut out;
  if (gate == GateKind::kNone) {
    // Exposed as a constant so loss code can treat all gate kinds uniformly.
    int64_t rows = tape.value(x_norm).rows();
    out.gate = tape.constant(Tensor::full({rows, 1}, 1.0f));
    out.y = core;
    return out;
  }
  Value pre = tape.add(tape.matmul(x_norm, adapter.gate_u), adapter.gate_b);
  Activation gate_act = gate == GateKind::kSigmoid ? Activation::kSigmoid : Activation::kRelu;
  out.gate = tape.activation(gate_act, pre);
  out.y = tape.row_scale(core, out.gate);
  return out;
}

namespace {

// x @ (W + B·A), computed additively so the frozen W stays untouched.
Value lora_matmul(Tape& tape, Value x, Value w, const BoundLoraPair& pair) {
  Value base = tape.matmul(x, w);
  Value delta = tape.matmul(tape.matmul(x, pair.b), pair.a);
  return tape.add(base, delta);
}

}  // namespace

ExtendedForward forward_extended(Tape& tape, const BoundExtended& model,
                                 const TokenBatch& inputs) {
  const BoundBackbone& bb = model.backbone;
  const ModelConfig& mc = bb.config;
  ExtendedForward out;

  Value x = embed_tokens(tape, bb, inputs);
  for (size_t i = 0; i < bb.layers.size(); ++i) {
    const BoundLayer& layer = bb.layers[i];
    x = attention_residual(tape, bb, layer, x, inputs.batch);
    Value xn = tape.rms_norm(x, layer.norm_ffn, mc.norm_eps);

    Value f;
    if (model.config.method == Method::kLora && !model.lora.empty()) {
      const BoundLayerLora& l = model.lora[i];
      Value up = lora_matmul(tape, xn, layer.ffn.w_in, l.in);
      Value gate = tape.activation(mc.activation, lora_matmul(tape, xn, layer.ffn.w_gate, l.gate));
      f = lora_matmul(tape, tape.mul(gate, up), layer.ffn.w_out, l.out);
    } else {
      f = glu_ffn(tape, xn, layer.ffn.w_in, layer.ffn.w_gate, layer.ffn.w_out, mc.activation);
    }
    x = tape.add(x, f);

    if (model.config.method == Method::kAdapter && !model.adapters.empty()) {
      const BoundAdapter& a = model.adapters[i];
      AdapterOut ao = adapter_forward(tape, a, xn, mc.activation, model.config.gate);
      x = tape.add(x, ao.y);
      out.adapter_ys.push_back(ao.y);
      out.gates.push_back(ao.gate);
    }
  }
  out.logits = head_logits(tape, bb, x);
  return out;
}

Tensor forward_logits(const ExtendedModel& model, const TokenBatch& inputs) {
  Tape tape;
  BoundExtended bound = bind_extended(tape, model, /*training=*/false);
  ExtendedForward fwd = forward_extended(tape, bound, inputs);
  return tape.value(fwd.logits);
}

}  // namespace nres
