#pragma once

#include <cstdint>
#include <string>

#include "nres/data.hpp"
#include "nres/extension.hpp"
#include "nres/model.hpp"
#include "nres/training.hpp"

namespace nres {

// The three synthetic languages of an experiment: the true original
// distribution A (pretraining and old-domain eval), an imperfect proxy A'
// of it (the "small amount of original data" mixed into extension
// training), and the new language B. A *_file path overrides generation
// for that slot.
struct DataConfig {
  SyntheticLanguageSpec original;  // defaults: markov2, seed 1, temperature 1.0
  SyntheticLanguageSpec proxy;     // defaults: original's chain, temperature 1.1
  SyntheticLanguageSpec novel;     // defaults: cipher of original's chain
  std::string original_file;
  std::string proxy_file;
  std::string novel_file;
  int64_t n_tokens = 2000000;
  float heldout_fraction = 0.05f;
};

void validate(const DataConfig& cfg);

// Top-level experiment description, mirrored one-to-one by the JSON config
// files. Unknown keys anywhere are rejected with their full path.
struct RunConfig {
  ModelConfig model;
  ExtensionConfig extension;
  TrainConfig training;
  DataConfig data;
  // Whether the source JSON pinned these itself (when false, commands may
  // substitute purpose-specific defaults such as the pretraining LR).
  bool lr_peak_explicit = false;
  bool total_steps_explicit = false;
  bool warmup_explicit = false;
};

RunConfig default_run_config();

// Peak learning rate convention per method: 5e-5 for finetune and LoRA,
// 2e-4 for adapter variants.
float default_peak_lr(Method method);

// Backbone pretraining peak. Extension methods can only stay neutral on the
// original language if the backbone has little left to learn on it, so the
// desk-scale pretrain drives close to the corpus entropy floor within its
// step budget (~2.05 vs the 2.01 floor at the default configuration).
inline constexpr float kPretrainPeakLr = 3e-3f;

// Parses and validates; `origin` names the source in errors. Missing keys
// fall back to defaults (training.alpha always mirrors extension.alpha;
// training.lr_peak falls back to the method default).
RunConfig run_config_from_json_text(const std::string& text, const std::string& origin);
RunConfig load_run_config(const std::string& path);

// Deterministic pretty-printed JSON round-trippable through the loader.
std::string run_config_to_json(const RunConfig& cfg);

void validate(const RunConfig& cfg);

struct CorpusSet {
  Corpus original;
  Corpus proxy;
  Corpus novel;
};

// Generates (or loads) all three corpora per the data config.
CorpusSet build_corpora(const DataConfig& cfg, int64_t seq_len);

}  // namespace nres
