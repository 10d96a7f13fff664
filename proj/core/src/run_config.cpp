#include "nres/run_config.hpp"

#include <fstream>

#include "config_json.hpp"
#include "nres/errors.hpp"

namespace nres {

namespace {

// Keys absent from a partial spec keep the values of `base`, so derived
// defaults (proxy/novel follow the original's seed) survive partial
// overrides.
SyntheticLanguageSpec spec_with_base(const Json& j, const std::string& path,
                                     const SyntheticLanguageSpec& base) {
  check_keys(j, {"kind", "seed", "temperature", "cipher_seed"}, path);
  SyntheticLanguageSpec spec;
  spec.kind = generator_from_string(json_str(j, "kind", to_string(base.kind), path));
  spec.seed = json_uint(j, "seed", base.seed, path);
  spec.temperature = static_cast<float>(json_num(j, "temperature", base.temperature, path));
  spec.cipher_seed = json_uint(j, "cipher_seed", base.cipher_seed, path);
  return spec;
}

SyntheticLanguageSpec derived_proxy(const SyntheticLanguageSpec& original) {
  SyntheticLanguageSpec proxy = original;
  proxy.kind = GeneratorKind::kMarkov2;
  proxy.temperature = 1.1f;
  return proxy;
}

SyntheticLanguageSpec derived_novel(const SyntheticLanguageSpec& original) {
  SyntheticLanguageSpec novel = original;
  novel.kind = GeneratorKind::kCipher;
  novel.temperature = 1.0f;
  novel.cipher_seed = original.seed + 1 == 0 ? 1 : original.seed + 1;
  return novel;
}

}  // namespace

void validate(const DataConfig& cfg) {
  if (cfg.n_tokens < 1) throw ConfigError("data: n_tokens must be positive");
  if (!(cfg.heldout_fraction >= 0.0f) || cfg.heldout_fraction >= 1.0f) {
    throw ConfigError("data: heldout_fraction must be in [0, 1)");
  }
  for (const SyntheticLanguageSpec* s : {&cfg.original, &cfg.proxy, &cfg.novel}) {
    if (!(s->temperature > 0.0f)) throw ConfigError("data: temperature must be positive");
  }
}

RunConfig default_run_config() {
  RunConfig cfg;
  cfg.data.proxy = derived_proxy(cfg.data.original);
  cfg.data.novel = derived_novel(cfg.data.original);
  cfg.training.alpha = cfg.extension.alpha;
  cfg.training.lr_peak = default_peak_lr(cfg.extension.method);
  return cfg;
}

float default_peak_lr(Method method) {
  switch (method) {
    case Method::kFinetune:
    case Method::kLora: return 5e-5f;
    case Method::kAdapter: return 2e-4f;
  }
  return 2e-4f;
}

RunConfig run_config_from_json_text(const std::string& text, const std::string& origin) {
  Json j = Json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw ConfigError("config: '" + origin + "' is not valid JSON");
  check_keys(j, {"model", "extension", "training", "data"}, origin);

  RunConfig cfg;
  if (j.contains("model")) {
    cfg.model = model_config_from_json(j["model"], origin + ".model");
  }
  if (j.contains("extension")) {
    cfg.extension = extension_config_from_json(j["extension"], origin + ".extension");
  }
  if (j.contains("training")) {
    const Json& t = j["training"];
    cfg.training = train_config_from_json(t, origin + ".training");
    cfg.lr_peak_explicit = t.contains("lr_peak");
    cfg.total_steps_explicit = t.contains("total_steps");
    cfg.warmup_explicit = t.contains("warmup_steps");
  }
  if (!cfg.lr_peak_explicit) cfg.training.lr_peak = default_peak_lr(cfg.extension.method);
  // One knob: the local-loss weight always comes from the extension config.
  cfg.training.alpha = cfg.extension.alpha;

  cfg.data.proxy = derived_proxy(cfg.data.original);
  cfg.data.novel = derived_novel(cfg.data.original);
  if (j.contains("data")) {
    const Json& d = j["data"];
    check_keys(d,
               {"original", "proxy", "novel", "original_file", "proxy_file", "novel_file",
                "n_tokens", "heldout_fraction"},
               origin + ".data");
    if (d.contains("original")) {
      cfg.data.original =
          spec_with_base(d["original"], origin + ".data.original", cfg.data.original);
      // Derived slots track the (possibly overridden) original.
      cfg.data.proxy = derived_proxy(cfg.data.original);
      cfg.data.novel = derived_novel(cfg.data.original);
    }
    if (d.contains("proxy")) {
      cfg.data.proxy = spec_with_base(d["proxy"], origin + ".data.proxy", cfg.data.proxy);
    }
    if (d.contains("novel")) {
      cfg.data.novel = spec_with_base(d["novel"], origin + ".data.novel", cfg.data.novel);
    }
    cfg.data.original_file = json_str(d, "original_file", "", origin + ".data");
    cfg.data.proxy_file = json_str(d, "proxy_file", "", origin + ".data");
    cfg.data.novel_file = json_str(d, "novel_file", "", origin + ".data");
    cfg.data.n_tokens = json_int(d, "n_tokens", cfg.data.n_tokens, origin + ".data");
    cfg.data.heldout_fraction = static_cast<float>(
        json_num(d, "heldout_fraction", cfg.data.heldout_fraction, origin + ".data"));
  }
  validate(cfg);
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return run_config_from_json_text(text, path);
}

std::string run_config_to_json(const RunConfig& cfg) {
  Json data{{"original", to_json(cfg.data.original)},
            {"proxy", to_json(cfg.data.proxy)},
            {"novel", to_json(cfg.data.novel)},
            {"n_tokens", cfg.data.n_tokens},
            {"heldout_fraction", cfg.data.heldout_fraction}};
  if (!cfg.data.original_file.empty()) data["original_file"] = cfg.data.original_file;
  if (!cfg.data.proxy_file.empty()) data["proxy_file"] = cfg.data.proxy_file;
  if (!cfg.data.novel_file.empty()) data["novel_file"] = cfg.data.novel_file;
  Json j{{"model", to_json(cfg.model)},
         {"extension", to_json(cfg.extension)},
         {"training", to_json(cfg.training)},
         {"data", data}};
  return j.dump(2) + "\n";
}

void validate(const RunConfig& cfg) {
  validate(cfg.model);
  validate(cfg.extension);
  validate(cfg.training);
  validate(cfg.data);
  if (cfg.training.alpha != cfg.extension.alpha) {
    throw ConfigError("config: training.alpha diverged from extension.alpha");
  }
  if (cfg.training.seq_len - 1 > cfg.model.max_seq_len) {
    throw ConfigError("config: seq_len " + std::to_string(cfg.training.seq_len) +
                      " needs model positions for " + std::to_string(cfg.training.seq_len - 1) +
                      " tokens, but max_seq_len is " + std::to_string(cfg.model.max_seq_len));
  }
  if (cfg.data.n_tokens < 10 * cfg.training.seq_len) {
    throw ConfigError("config: data.n_tokens " + std::to_string(cfg.data.n_tokens) +
                      " is below the 10x seq_len floor (" +
                      std::to_string(10 * cfg.training.seq_len) + ")");
  }
}

CorpusSet build_corpora(const DataConfig& cfg, int64_t seq_len) {
  validate(cfg);
  auto build = [&](const SyntheticLanguageSpec& spec, const std::string& file, Domain domain) {
    if (!file.empty()) return load_corpus(file, cfg.heldout_fraction, domain);
    return generate_corpus(spec, cfg.n_tokens, cfg.heldout_fraction, seq_len, domain);
  };
  CorpusSet set;
  set.original = build(cfg.original, cfg.original_file, Domain::kOriginal);
  set.proxy = build(cfg.proxy, cfg.proxy_file, Domain::kOriginal);
  set.novel = build(cfg.novel, cfg.novel_file, Domain::kNew);
  return set;
}

}  // namespace nres
