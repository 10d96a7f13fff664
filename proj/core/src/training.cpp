#include "nres/training.hpp"

#include <cmath>
#include <sstream>

#include "nres/errors.hpp"
#include "nres/losses.hpp"

namespace nres {

void validate(const TrainConfig& cfg) {
  if (!(cfg.lr_peak > 0.0f)) throw ConfigError("train: lr_peak must be positive");
  if (cfg.warmup_steps < 0) throw ConfigError("train: warmup_steps must be >= 0");
  if (cfg.total_steps < 0) throw ConfigError("train: total_steps must be >= 0");
  if (cfg.warmup_steps > cfg.total_steps) {
    throw ConfigError("train: warmup_steps " + std::to_string(cfg.warmup_steps) +
                      " exceeds total_steps " + std::to_string(cfg.total_steps));
  }
  if (cfg.batch < 1) throw ConfigError("train: batch must be positive");
  if (cfg.seq_len < 2) throw ConfigError("train: seq_len must be at least 2");
  if (!(cfg.alpha >= 0.0f)) throw ConfigError("train: alpha must be >= 0");
  if (!(cfg.p >= 0.0f) || cfg.p > 1.0f) throw ConfigError("train: p must be in [0, 1]");
  if (!(cfg.weight_decay >= 0.0f)) throw ConfigError("train: weight_decay must be >= 0");
  if (!(cfg.grad_clip > 0.0f)) throw ConfigError("train: grad_clip must be positive");
  if (cfg.eval_interval < 1) throw ConfigError("train: eval_interval must be positive");
  if (cfg.max_eval_tokens < 0) throw ConfigError("train: max_eval_tokens must be >= 0");
}

float lr_schedule(int64_t step, float peak, int64_t warmup_steps, int64_t total_steps) {
  if (step < 0 || step > total_steps) {
    throw ContractError("lr_schedule: step " + std::to_string(step) + " outside [0, " +
                        std::to_string(total_steps) + "]");
  }
  if (step < warmup_steps) {
    return peak * static_cast<float>(step) / static_cast<float>(warmup_steps);
  }
  int64_t span = total_steps - warmup_steps;
  if (span <= 0) return peak;
  double t = static_cast<double>(step - warmup_steps) / static_cast<double>(span);
  double floor = 0.1 * static_cast<double>(peak);
  double amp = 0.9 * static_cast<double>(peak);
  return static_cast<float>(floor + amp * 0.5 * (1.0 + std::cos(t * 3.14159265358979323846)));
}

AdamW::AdamW(std::vector<std::string> names, const std::vector<Tensor*>& params, float beta1,
             float beta2, float eps, float weight_decay)
    : names_(std::move(names)),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps),
      weight_decay_(weight_decay) {
  if (names_.size() != params.size()) {
    throw DimensionError("AdamW: " + std::to_string(names_.size()) + " names for " +
                         std::to_string(params.size()) + " parameters");
  }
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const Tensor* p : params) {
    m_.emplace_back(static_cast<size_t>(p->numel()), 0.0f);
    v_.emplace_back(static_cast<size_t>(p->numel()), 0.0f);
  }
}

void AdamW::step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
                 float lr, float grad_scale) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw DimensionError("AdamW: step called with " + std::to_string(params.size()) +
                         " params / " + std::to_string(grads.size()) + " grads, state has " +
                         std::to_string(m_.size()));
  }
  ++t_;
  double bc1 = 1.0 - std::pow(static_cast<double>(beta1_), static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(static_cast<double>(beta2_), static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = *grads[i];
    if (p.numel() != static_cast<int64_t>(m_[i].size()) || !p.same_shape(g)) {
      throw DimensionError("AdamW: parameter '" + names_[i] + "' shape changed");
    }
    if (!g.all_finite()) {
      throw NumericError("AdamW: non-finite gradient for parameter '" + names_[i] + "' at step " +
                         std::to_string(t_));
    }
    float* pd = p.data();
    const float* gd = g.data();
    float* m = m_[i].data();
    float* v = v_[i].data();
    float decay = 1.0f - lr * weight_decay_;
    for (int64_t j = 0; j < p.numel(); ++j) {
      float gj = gd[j] * grad_scale;
      pd[j] *= decay;
      m[j] = beta1_ * m[j] + (1.0f - beta1_) * gj;
      v[j] = beta2_ * v[j] + (1.0f - beta2_) * gj * gj;
      double mhat = static_cast<double>(m[j]) / bc1;
      double vhat = static_cast<double>(v[j]) / bc2;
      pd[j] -= static_cast<float>(static_cast<double>(lr) * mhat /
                                  (std::sqrt(vhat) + static_cast<double>(eps_)));
    }
  }
}

double global_grad_norm(const std::vector<const Tensor*>& grads) {
  double total = 0.0;
  for (const Tensor* g : grads) {
    const float* d = g->data();
    for (int64_t j = 0; j < g->numel(); ++j) {
      total += static_cast<double>(d[j]) * static_cast<double>(d[j]);
    }
  }
  return std::sqrt(total);
}

namespace {

// Interim evals may be capped; the last eval always scores everything.
EvalRecord make_eval(const ExtendedModel* ext, const BackboneModel* bb, const Corpus& original,
                     const Corpus* novel, const TrainConfig& cfg, int64_t step, float lr,
                     const LossBreakdown& losses, bool final_eval) {
  int64_t cap = final_eval ? 0 : cfg.max_eval_tokens;
  EvalRecord r;
  r.step = step;
  r.lr = lr;
  Perplexity old_ppl = ext ? corpus_nll(*ext, original.heldout, cfg.seq_len, cap)
                           : corpus_nll(*bb, original.heldout, cfg.seq_len, cap);
  r.nll_old = old_ppl.nll;
  r.ppl_old = old_ppl.ppl;
  if (novel) {
    Perplexity new_ppl = ext ? corpus_nll(*ext, novel->heldout, cfg.seq_len, cap)
                             : corpus_nll(*bb, novel->heldout, cfg.seq_len, cap);
    r.nll_new = new_ppl.nll;
    r.ppl_new = new_ppl.ppl;
  } else {
    r.nll_new = std::nan("");
    r.ppl_new = std::nan("");
  }
  r.lm_loss = losses.lm;
  r.local_l1 = losses.local_l1;
  r.local_ce = losses.local_ce;
  return r;
}

void check_finite_loss(const LossBreakdown& losses, int64_t step) {
  if (std::isfinite(losses.total)) return;
  std::ostringstream msg;
  msg << "training diverged at step " << step << ": total=" << losses.total
      << " (lm=" << losses.lm << ", l1=" << losses.local_l1 << ", ce=" << losses.local_ce << ")";
  throw NumericError(msg.str());
}

}  // namespace

TrainResult train_extension(ExtendedModel& model, const Corpus& original, const Corpus& proxy,
                            const Corpus& novel, const TrainConfig& cfg) {
  validate(cfg);
  validate(model.config);
  validate(model.backbone.config);

  std::vector<ParamRef> refs = trainable_parameters(model);
  std::vector<std::string> names;
  std::vector<Tensor*> params;
  for (auto& r : refs) {
    names.push_back(r.name);
    params.push_back(r.tensor);
  }
  AdamW opt(names, params, 0.9f, 0.95f, 1e-8f, cfg.weight_decay);

  TrainResult result;
  for (int64_t step = 1; step <= cfg.total_steps; ++step) {
    Rng rng(Rng::mix(cfg.seed, static_cast<uint64_t>(step)));
    MixedBatch batch = sample_batch(proxy, novel, cfg.p, cfg.batch, cfg.seq_len, rng);
    LmIo io = make_lm_io(batch.windows);

    Tape tape;
    std::vector<Value> leaves;
    BoundExtended bound = bind_extended(tape, model, /*training=*/true, &leaves);
    ExtendedForward fwd = forward_extended(tape, bound, io.inputs);
    Value lm = tape.softmax_cross_entropy(fwd.logits, io.targets);

    int64_t tokens_per_seq = io.inputs.seq;
    std::optional<Value> l1;
    if (model.config.use_l1_loss) {
      l1 = l1_local_loss(tape, fwd.adapter_ys, batch.mask, tokens_per_seq,
                         model.backbone.config.model_dim);
    }
    std::optional<Value> ce;
    if (model.config.use_ce_loss) {
      ce = gate_ce_loss(tape, fwd.gates, batch.mask, tokens_per_seq, model.config.gate);
    }
    LossBreakdown losses = combine(tape, lm, l1, ce, cfg.alpha);
    check_finite_loss(losses, step);

    tape.backward(losses.total_node);
    std::vector<const Tensor*> grads;
    grads.reserve(leaves.size());
    for (Value v : leaves) grads.push_back(&tape.grad(v));
    double norm = global_grad_norm(grads);
    float scale = norm > static_cast<double>(cfg.grad_clip)
                      ? static_cast<float>(static_cast<double>(cfg.grad_clip) / norm)
                      : 1.0f;
    float lr = lr_schedule(step, cfg.lr_peak, cfg.warmup_steps, cfg.total_steps);
    opt.step(params, grads, lr, scale);

    bool final_step = step == cfg.total_steps;
    if (step % cfg.eval_interval == 0 || final_step) {
      result.evals.push_back(
          make_eval(&model, nullptr, original, &novel, cfg, step, lr, losses, final_step));
    }
    result.steps_run = step;
  }
  return result;
}

TrainResult train_backbone(BackboneModel& model, const Corpus& original, const TrainConfig& cfg,
                           const Corpus* monitor) {
  validate(cfg);
  validate(model.config);

  std::vector<std::string> names;
  std::vector<Tensor*> params;
  visit_params(model, [&](const std::string& n, Tensor& t) {
    names.push_back(n);
    params.push_back(&t);
  });
  AdamW opt(names, params, 0.9f, 0.95f, 1e-8f, cfg.weight_decay);

  TrainResult result;
  for (int64_t step = 1; step <= cfg.total_steps; ++step) {
    Rng rng(Rng::mix(cfg.seed, static_cast<uint64_t>(step)));
    // p = 1: every sequence comes from the original corpus.
    MixedBatch batch = sample_batch(original, original, 1.0f, cfg.batch, cfg.seq_len, rng);
    LmIo io = make_lm_io(batch.windows);

    Tape tape;
    std::vector<Value> leaves;
    BoundBackbone bound = bind_backbone(tape, model, /*trainable=*/true, &leaves);
    Value logits = forward_lm(tape, bound, io.inputs);
    Value lm = tape.softmax_cross_entropy(logits, io.targets);
    LossBreakdown losses = combine(tape, lm, std::nullopt, std::nullopt, 0.0f);
    check_finite_loss(losses, step);

    tape.backward(losses.total_node);
    std::vector<const Tensor*> grads;
    grads.reserve(leaves.size());
    for (Value v : leaves) grads.push_back(&tape.grad(v));
    double norm = global_grad_norm(grads);
    float scale = norm > static_cast<double>(cfg.grad_clip)
                      ? static_cast<float>(static_cast<double>(cfg.grad_clip) / norm)
                      : 1.0f;
    float lr = lr_schedule(step, cfg.lr_peak, cfg.warmup_steps, cfg.total_steps);
    opt.step(params, grads, lr, scale);

    bool final_step = step == cfg.total_steps;
    if (step % cfg.eval_interval == 0 || final_step) {
      result.evals.push_back(
          make_eval(nullptr, &model, original, monitor, cfg, step, lr, losses, final_step));
    }
    result.steps_run = step;
  }
  return result;
}

}  // namespace nres
