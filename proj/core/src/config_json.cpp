#include "config_json.hpp"

#include <set>

namespace nres {

void check_object(const Json& j, const std::string& path) {
  if (!j.is_object()) {
    throw ConfigError("config: '" + path + "' must be a JSON object");
  }
}

void check_keys(const Json& j, std::initializer_list<const char*> allowed,
                const std::string& path) {
  check_object(j, path);
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!ok.count(it.key())) {
      throw ConfigError("config: unknown key '" + path + "." + it.key() + "'");
    }
  }
}

namespace {

const Json* find(const Json& j, const char* key) {
  auto it = j.find(key);
  return it == j.end() || it->is_null() ? nullptr : &*it;
}

[[noreturn]] void type_error(const char* key, const char* want, const std::string& path) {
  throw ConfigError("config: '" + path + "." + key + "' must be " + want);
}

}  // namespace

int64_t json_int(const Json& j, const char* key, int64_t fallback, const std::string& path) {
  const Json* v = find(j, key);
  if (!v) return fallback;
  if (!v->is_number_integer()) type_error(key, "an integer", path);
  return v->get<int64_t>();
}

uint64_t json_uint(const Json& j, const char* key, uint64_t fallback, const std::string& path) {
  const Json* v = find(j, key);
  if (!v) return fallback;
  if (!v->is_number_integer() || (v->is_number_integer() && !v->is_number_unsigned() &&
                                  v->get<int64_t>() < 0)) {
    type_error(key, "a non-negative integer", path);
  }
  return v->get<uint64_t>();
}

double json_num(const Json& j, const char* key, double fallback, const std::string& path) {
  const Json* v = find(j, key);
  if (!v) return fallback;
  if (!v->is_number()) type_error(key, "a number", path);
  return v->get<double>();
}

bool json_bool(const Json& j, const char* key, bool fallback, const std::string& path) {
  const Json* v = find(j, key);
  if (!v) return fallback;
  if (!v->is_boolean()) type_error(key, "a boolean", path);
  return v->get<bool>();
}

std::string json_str(const Json& j, const char* key, const std::string& fallback,
                     const std::string& path) {
  const Json* v = find(j, key);
  if (!v) return fallback;
  if (!v->is_string()) type_error(key, "a string", path);
  return v->get<std::string>();
}

Json to_json(const ModelConfig& cfg) {
  return Json{{"n_layers", cfg.n_layers},
              {"model_dim", cfg.model_dim},
              {"n_heads", cfg.n_heads},
              {"ffn_latent", cfg.ffn_latent},
              {"vocab_size", cfg.vocab_size},
              {"activation", to_string(cfg.activation)},
              {"max_seq_len", cfg.max_seq_len},
              {"norm_eps", cfg.norm_eps}};
}

Json to_json(const ExtensionConfig& cfg) {
  return Json{{"method", to_string(cfg.method)},
              {"gate", to_string(cfg.gate)},
              {"use_l1_loss", cfg.use_l1_loss},
              {"use_ce_loss", cfg.use_ce_loss},
              {"alpha", cfg.alpha},
              {"budget_fraction", cfg.budget_fraction},
              {"init_scheme", to_string(cfg.init_scheme)}};
}

Json to_json(const TrainConfig& cfg) {
  return Json{{"lr_peak", cfg.lr_peak},
              {"warmup_steps", cfg.warmup_steps},
              {"total_steps", cfg.total_steps},
              {"batch", cfg.batch},
              {"seq_len", cfg.seq_len},
              {"p", cfg.p},
              {"weight_decay", cfg.weight_decay},
              {"grad_clip", cfg.grad_clip},
              {"seed", cfg.seed},
              {"eval_interval", cfg.eval_interval},
              {"max_eval_tokens", cfg.max_eval_tokens}};
}

Json to_json(const SyntheticLanguageSpec& spec) {
  return Json{{"kind", to_string(spec.kind)},
              {"seed", spec.seed},
              {"temperature", spec.temperature},
              {"cipher_seed", spec.cipher_seed}};
}

ModelConfig model_config_from_json(const Json& j, const std::string& path) {
  check_keys(j,
             {"n_layers", "model_dim", "n_heads", "ffn_latent", "vocab_size", "activation",
              "max_seq_len", "norm_eps"},
             path);
  ModelConfig cfg;
  cfg.n_layers = json_int(j, "n_layers", cfg.n_layers, path);
  cfg.model_dim = json_int(j, "model_dim", cfg.model_dim, path);
  cfg.n_heads = json_int(j, "n_heads", cfg.n_heads, path);
  cfg.ffn_latent = json_int(j, "ffn_latent", cfg.ffn_latent, path);
  cfg.vocab_size = json_int(j, "vocab_size", cfg.vocab_size, path);
  cfg.activation = activation_from_string(
      json_str(j, "activation", to_string(cfg.activation), path));
  cfg.max_seq_len = json_int(j, "max_seq_len", cfg.max_seq_len, path);
  cfg.norm_eps = static_cast<float>(json_num(j, "norm_eps", cfg.norm_eps, path));
  return cfg;
}

ExtensionConfig extension_config_from_json(const Json& j, const std::string& path) {
  check_keys(j,
             {"method", "gate", "use_l1_loss", "use_ce_loss", "alpha", "budget_fraction",
              "init_scheme"},
             path);
  ExtensionConfig cfg;
  cfg.method = method_from_string(json_str(j, "method", to_string(cfg.method), path));
  cfg.gate = gate_from_string(json_str(j, "gate", to_string(cfg.gate), path));
  cfg.use_l1_loss = json_bool(j, "use_l1_loss", cfg.use_l1_loss, path);
  cfg.use_ce_loss = json_bool(j, "use_ce_loss", cfg.use_ce_loss, path);
  cfg.alpha = static_cast<float>(json_num(j, "alpha", cfg.alpha, path));
  cfg.budget_fraction = static_cast<float>(json_num(j, "budget_fraction", cfg.budget_fraction,
                                                    path));
  cfg.init_scheme = init_scheme_from_string(
      json_str(j, "init_scheme", to_string(cfg.init_scheme), path));
  return cfg;
}

TrainConfig train_config_from_json(const Json& j, const std::string& path) {
  check_keys(j,
             {"lr_peak", "warmup_steps", "total_steps", "batch", "seq_len", "p", "weight_decay",
              "grad_clip", "seed", "eval_interval", "max_eval_tokens"},
             path);
  TrainConfig cfg;
  cfg.lr_peak = static_cast<float>(json_num(j, "lr_peak", cfg.lr_peak, path));
  cfg.warmup_steps = json_int(j, "warmup_steps", cfg.warmup_steps, path);
  cfg.total_steps = json_int(j, "total_steps", cfg.total_steps, path);
  cfg.batch = json_int(j, "batch", cfg.batch, path);
  cfg.seq_len = json_int(j, "seq_len", cfg.seq_len, path);
  cfg.p = static_cast<float>(json_num(j, "p", cfg.p, path));
  cfg.weight_decay = static_cast<float>(json_num(j, "weight_decay", cfg.weight_decay, path));
  cfg.grad_clip = static_cast<float>(json_num(j, "grad_clip", cfg.grad_clip, path));
  cfg.seed = json_uint(j, "seed", cfg.seed, path);
  cfg.eval_interval = json_int(j, "eval_interval", cfg.eval_interval, path);
  cfg.max_eval_tokens = json_int(j, "max_eval_tokens", cfg.max_eval_tokens, path);
  return cfg;
}

SyntheticLanguageSpec language_spec_from_json(const Json& j, const std::string& path) {
  check_keys(j, {"kind", "seed", "temperature", "cipher_seed"}, path);
  SyntheticLanguageSpec spec;
  spec.kind = generator_from_string(json_str(j, "kind", to_string(spec.kind), path));
  spec.seed = json_uint(j, "seed", spec.seed, path);
  spec.temperature = static_cast<float>(json_num(j, "temperature", spec.temperature, path));
  spec.cipher_seed = json_uint(j, "cipher_seed", spec.cipher_seed, path);
  return spec;
}

}  // namespace nres
