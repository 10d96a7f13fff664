#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nres/data.hpp"
#include "nres/eval.hpp"
#include "nres/extension.hpp"
#include "nres/model.hpp"
#include "nres/tensor.hpp"

namespace nres {

struct TrainConfig {
  float lr_peak = 2e-4f;
  int64_t warmup_steps = 100;
  int64_t total_steps = 2000;
  int64_t batch = 16;
  int64_t seq_len = 128;
  float alpha = 0.01f;      // weight of the local losses; authoritative for the loop
  float p = 0.1f;           // fraction of sequences drawn from the original proxy
  float weight_decay = 0.0f;
  float grad_clip = 1.0f;
  uint64_t seed = 1;
  int64_t eval_interval = 100;
  // Heldout tokens per domain for interim evals; 0 = no cap. The final eval
  // always uses the full heldout split.
  int64_t max_eval_tokens = 8192;
};

void validate(const TrainConfig& cfg);

// Linear warmup to the peak over warmup_steps, then cosine decay reaching
// 10% of the peak at total_steps.
float lr_schedule(int64_t step, float peak, int64_t warmup_steps, int64_t total_steps);

// Decoupled-weight-decay Adam. State (m, v) exists only for the parameters
// handed to the constructor, so frozen tensors never accumulate state.
class AdamW {
 public:
  AdamW(std::vector<std::string> names, const std::vector<Tensor*>& params, float beta1 = 0.9f,
        float beta2 = 0.95f, float eps = 1e-8f, float weight_decay = 0.0f);

  // p <- p(1 - lr*wd), then the bias-corrected Adam update using
  // grad_scale * g (the global-norm clip factor is folded in here so
  // gradients are never mutated in place).
  void step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads, float lr,
            float grad_scale = 1.0f);

  int64_t steps_taken() const { return t_; }

 private:
  std::vector<std::string> names_;
  std::vector<std::vector<float>> m_, v_;
  float beta1_, beta2_, eps_, weight_decay_;
  int64_t t_ = 0;
};

// sqrt(sum of squared entries) over all gradients, accumulated in f64.
double global_grad_norm(const std::vector<const Tensor*>& grads);

struct TrainResult {
  std::vector<EvalRecord> evals;
  int64_t steps_run = 0;
};

// One full extension run: per step, sample a p-mixture batch from
// (proxy, novel), forward with adapter outputs and gates collected, combine
// the LM loss with the configured local losses, backprop through trainable
// parameters only, clip, and update. Heldout NLL is measured on `original`
// (the true old distribution, not the proxy) and `novel` every
// eval_interval steps and after the last step.
TrainResult train_extension(ExtendedModel& model, const Corpus& original, const Corpus& proxy,
                            const Corpus& novel, const TrainConfig& cfg);

// Pretraining: every sequence comes from `original`; all parameters train.
// If `monitor` is given, its heldout NLL is tracked as the new-domain
// column; otherwise that column is NaN.
TrainResult train_backbone(BackboneModel& model, const Corpus& original, const TrainConfig& cfg,
                           const Corpus* monitor = nullptr);

}  // namespace nres
