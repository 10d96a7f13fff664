#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nres/model.hpp"
#include "nres/tape.hpp"
#include "nres/tensor.hpp"

namespace nres {

enum class Method { kFinetune, kLora, kAdapter };
enum class GateKind { kNone, kSigmoid, kRelu };
enum class InitScheme { kHe, kLowVariance };

Method method_from_string(const std::string& name);
GateKind gate_from_string(const std::string& name);
InitScheme init_scheme_from_string(const std::string& name);
std::string to_string(Method m);
std::string to_string(GateKind g);
std::string to_string(InitScheme s);

// How a pretrained backbone is extended toward a new domain.
struct ExtensionConfig {
  Method method = Method::kAdapter;
  GateKind gate = GateKind::kRelu;
  bool use_l1_loss = true;
  bool use_ce_loss = false;
  float alpha = 0.01f;           // weight of the local losses in the objective
  float budget_fraction = 0.2f;  // trainable params as a fraction of backbone params
  InitScheme init_scheme = InitScheme::kLowVariance;
};

// Cross-field rules: finetune trains everything and admits no gate or local
// loss; the CE loss supervises a probability so it requires a sigmoid gate;
// gates and local losses only exist on the adapter method.
void validate(const ExtensionConfig& cfg);

// GLU bottleneck placed in parallel with one FFN, plus a scalar-per-token
// block gate g = act(u . x_norm + b) multiplying its output.
struct GatedAdapter {
  Tensor a_in, a_gate;  // [d × h]
  Tensor a_out;         // [h × d]
  Tensor gate_u;        // [d × 1]
  Tensor gate_b;        // [1]
  GateKind gate = GateKind::kNone;
};

// Additive low-rank delta on one frozen matrix: effective W + B·A.
struct LoraPair {
  Tensor b;  // [in × r], zero at init so the delta starts at 0
  Tensor a;  // [r × out]
};

struct LayerLora {
  LoraPair in, gate, out;  // one pair per FFN matrix
};

// Backbone plus per-layer extension state. Backbone tensors are frozen
// (bitwise untouched by training) unless method = finetune.
struct ExtendedModel {
  BackboneModel backbone;
  ExtensionConfig config;
  std::vector<GatedAdapter> adapters;  // method = adapter, one per layer
  std::vector<LayerLora> lora;         // method = lora, one per layer
};

// Bottleneck width h such that L·(3dh + d + 1) stays within
// budget_fraction of the backbone parameter count; rounded down.
int64_t adapter_latent(const ModelConfig& cfg, float budget_fraction);
// Rank r such that L·3·r·(d + ffn_latent) stays within the budget.
int64_t lora_rank(const ModelConfig& cfg, float budget_fraction);

ExtendedModel attach_adapters(BackboneModel backbone, const ExtensionConfig& cfg, uint64_t seed);
ExtendedModel attach_lora(BackboneModel backbone, const ExtensionConfig& cfg, uint64_t seed);
// Dispatches on cfg.method; finetune attaches nothing.
ExtendedModel attach_extension(BackboneModel backbone, const ExtensionConfig& cfg, uint64_t seed);

struct ParamRef {
  std::string name;
  Tensor* tensor;
};

// Every parameter (backbone first, then extension state), stable order.
std::vector<ParamRef> all_parameters(ExtendedModel& model);
// Exactly the parameters the optimizer may touch, in a stable order:
// everything for finetune, adapter + gate weights for adapter, low-rank
// pairs for lora.
std::vector<ParamRef> trainable_parameters(ExtendedModel& model);

int64_t param_count(const ExtendedModel& model, bool trainable_only);

struct BoundAdapter {
  Value a_in, a_gate, a_out, gate_u, gate_b;
};

struct BoundLoraPair {
  Value b, a;
};

struct BoundLayerLora {
  BoundLoraPair in, gate, out;
};

struct BoundExtended {
  BoundBackbone backbone;
  ExtensionConfig config;
  std::vector<BoundAdapter> adapters;
  std::vector<BoundLayerLora> lora;
};

// Registers the model on the tape. With training=true the trainable set
// (per trainable_parameters) gets requires_grad; frozen tensors never do.
// If leaves is given it receives handles for the trainable set, in
// trainable_parameters order.
BoundExtended bind_extended(Tape& tape, const ExtendedModel& model, bool training,
                            std::vector<Value>* leaves = nullptr);

struct AdapterOut {
  Value y;     // [tokens × d], the contribution added to the residual stream
  Value gate;  // [tokens × 1], g per token (constant 1 when gate = none)
};

// y = g · A_o(act(A_g x) ⊙ A_i x) with g = gate_act(u·x + b); x is the
// FFN's normalized input.
AdapterOut adapter_forward(Tape& tape, const BoundAdapter& adapter, Value x_norm, Activation act,
                           GateKind gate);

struct ExtendedForward {
  Value logits;                   // [tokens × V]
  std::vector<Value> adapter_ys;  // per layer, adapter method only
  std::vector<Value> gates;       // per layer, adapter method only
};

// Forward pass with the extension applied: adapters add in parallel with
// each FFN; LoRA augments each FFN matmul with its low-rank delta.
ExtendedForward forward_extended(Tape& tape, const BoundExtended& model, const TokenBatch& inputs);

// Convenience non-training forward: builds a private tape, returns logits.
Tensor forward_logits(const ExtendedModel& model, const TokenBatch& inputs);

}  // namespace nres
