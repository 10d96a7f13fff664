#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nres/extension.hpp"
#include "nres/model.hpp"

namespace nres {

// One metrics row, emitted periodically during training and by cmd_eval.
// nll_* are mean per-token negative log-likelihoods on heldout data;
// ppl = exp(nll). The loss fields snapshot the emitting step's breakdown
// (zero when produced outside a training loop).
struct EvalRecord {
  int64_t step = 0;
  float lr = 0.0f;
  double nll_old = 0.0;
  double nll_new = 0.0;  // NaN when no new-domain corpus is being tracked
  double ppl_old = 0.0;
  double ppl_new = 0.0;
  float lm_loss = 0.0f;
  float local_l1 = 0.0f;
  float local_ce = 0.0f;
};

struct Perplexity {
  double nll = 0.0;
  double ppl = 1.0;
};

// Mean NLL over all predicted positions in non-overlapping windows of
// length seq_len (whole windows only). max_tokens > 0 caps how much of the
// stream is scored. The stream must cover at least one window.
Perplexity corpus_nll(const BackboneModel& model, const std::vector<int32_t>& tokens,
                      int64_t seq_len, int64_t max_tokens = 0);
Perplexity corpus_nll(const ExtendedModel& model, const std::vector<int32_t>& tokens,
                      int64_t seq_len, int64_t max_tokens = 0);

// 1 - mean(s_i) over a max-normalized non-increasing spectrum: 0 for a flat
// spectrum, approaching 1 when one direction dominates.
double skewness_metric(const std::vector<double>& normalized_spectrum);

struct SpectrumEntry {
  std::string owner;           // "backbone" or "adapter"
  int64_t layer = 0;
  std::vector<double> values;  // singular values / largest, descending
  bool zero_matrix = false;    // all-zero matrix; values reported as zeros
  double skewness = 0.0;
};

// Normalized singular-value spectra of every gating matrix: the backbone's
// W_g per layer, plus each adapter's A_g when adapters are attached.
std::vector<SpectrumEntry> gating_spectra(const BackboneModel& model);
std::vector<SpectrumEntry> gating_spectra(const ExtendedModel& model);

// CSV rows: owner,layer,index,value.
void write_spectra_csv(const std::string& path, const std::vector<SpectrumEntry>& entries);

// JSONL: one object per record with keys {step, lr, nll_old, nll_new,
// ppl_old, ppl_new, lm_loss, local_l1, local_ce}; NaN serialized as null.
void write_metrics_jsonl(const std::string& path, const std::vector<EvalRecord>& records);
std::vector<EvalRecord> read_metrics_jsonl(const std::string& path);

struct TradeoffRow {
  std::string method;
  double lr = 0.0;
  double p = 0.0;
  double alpha = 0.0;
  double nll_old = 0.0;
  double nll_new = 0.0;
};

// Final-eval row per run directory (reads run_config.json and the last
// metrics.jsonl record), sorted by method then lr.
std::vector<TradeoffRow> tradeoff_table(const std::vector<std::string>& run_dirs);

void write_tradeoff_csv(const std::string& path, const std::vector<TradeoffRow>& rows);
std::string format_tradeoff_text(const std::vector<TradeoffRow>& rows);

}  // namespace nres
