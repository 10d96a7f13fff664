#include "nres/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "nres/errors.hpp"
#include "nres/run_config.hpp"
#include "nres/svd.hpp"

namespace nres {

namespace {

using Json = nlohmann::json;

// Forward-agnostic NLL accumulator over non-overlapping windows.
Perplexity nll_over_windows(const std::vector<int32_t>& tokens, int64_t seq_len,
                            int64_t max_tokens,
                            const std::function<Value(Tape&, const TokenBatch&)>& forward) {
  if (seq_len < 2) throw ConfigError("perplexity: seq_len must be at least 2");
  int64_t n_windows = static_cast<int64_t>(tokens.size()) / seq_len;
  if (n_windows < 1) {
    throw ContractError("perplexity: stream of " + std::to_string(tokens.size()) +
                        " tokens does not cover one window of " + std::to_string(seq_len));
  }
  if (max_tokens > 0) {
    n_windows = std::min(n_windows, std::max<int64_t>(1, max_tokens / seq_len));
  }

  constexpr int64_t kChunk = 16;  // windows per tape; bounds peak memory
  double total = 0.0;
  int64_t rows = 0;
  for (int64_t w = 0; w < n_windows; w += kChunk) {
    int64_t b = std::min(kChunk, n_windows - w);
    TokenBatch windows;
    windows.batch = b;
    windows.seq = seq_len;
    windows.tokens.assign(tokens.begin() + w * seq_len, tokens.begin() + (w + b) * seq_len);
    LmIo io = make_lm_io(windows);

    Tape tape;
    Value logits = forward(tape, io.inputs);
    Value ce = tape.softmax_cross_entropy(logits, io.targets);
    int64_t chunk_rows = b * (seq_len - 1);
    total += static_cast<double>(tape.value(ce).data()[0]) * static_cast<double>(chunk_rows);
    rows += chunk_rows;
  }
  Perplexity p;
  p.nll = total / static_cast<double>(rows);
  p.ppl = std::exp(p.nll);
  return p;
}

SpectrumEntry spectrum_of(const Tensor& matrix, std::string owner, int64_t layer) {
  SpectrumEntry e;
  e.owner = std::move(owner);
  e.layer = layer;
  e.values = singular_values(matrix);
  double top = e.values.empty() ? 0.0 : e.values.front();
  if (top <= 0.0) {
    e.zero_matrix = true;
    std::fill(e.values.begin(), e.values.end(), 0.0);
  } else {
    for (double& v : e.values) v /= top;
  }
  e.skewness = skewness_metric(e.values);
  return e;
}

std::string num6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace

Perplexity corpus_nll(const BackboneModel& model, const std::vector<int32_t>& tokens,
                      int64_t seq_len, int64_t max_tokens) {
  return nll_over_windows(tokens, seq_len, max_tokens,
                          [&](Tape& tape, const TokenBatch& inputs) {
                            BoundBackbone bound = bind_backbone(tape, model, false);
                            return forward_lm(tape, bound, inputs);
                          });
}

Perplexity corpus_nll(const ExtendedModel& model, const std::vector<int32_t>& tokens,
                      int64_t seq_len, int64_t max_tokens) {
  return nll_over_windows(tokens, seq_len, max_tokens,
                          [&](Tape& tape, const TokenBatch& inputs) {
                            BoundExtended bound = bind_extended(tape, model, false);
                            return forward_extended(tape, bound, inputs).logits;
                          });
}

double skewness_metric(const std::vector<double>& normalized_spectrum) {
  if (normalized_spectrum.empty()) {
    throw ContractError("skewness_metric: empty spectrum");
  }
  double sum = 0.0;
  for (double v : normalized_spectrum) sum += v;
  return 1.0 - sum / static_cast<double>(normalized_spectrum.size());
}

std::vector<SpectrumEntry> gating_spectra(const BackboneModel& model) {
  std::vector<SpectrumEntry> out;
  for (size_t i = 0; i < model.layers.size(); ++i) {
    out.push_back(spectrum_of(model.layers[i].ffn.w_gate, "backbone",
                              static_cast<int64_t>(i)));
  }
  return out;
}

std::vector<SpectrumEntry> gating_spectra(const ExtendedModel& model) {
  std::vector<SpectrumEntry> out = gating_spectra(model.backbone);
  for (size_t i = 0; i < model.adapters.size(); ++i) {
    out.push_back(spectrum_of(model.adapters[i].a_gate, "adapter", static_cast<int64_t>(i)));
  }
  return out;
}

void write_spectra_csv(const std::string& path, const std::vector<SpectrumEntry>& entries) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw FormatError("spectra: cannot open '" + path + "' for writing");
  f << "owner,layer,index,value\n";
  for (const SpectrumEntry& e : entries) {
    for (size_t i = 0; i < e.values.size(); ++i) {
      f << e.owner << ',' << e.layer << ',' << i << ',' << num6(e.values[i]) << '\n';
    }
  }
  if (!f) throw FormatError("spectra: write to '" + path + "' failed");
}

namespace {

Json record_to_json(const EvalRecord& r) {
  // Non-finite numbers serialize as null and read back as NaN.
  return Json{{"step", r.step},         {"lr", r.lr},
              {"nll_old", r.nll_old},   {"nll_new", r.nll_new},
              {"ppl_old", r.ppl_old},   {"ppl_new", r.ppl_new},
              {"lm_loss", r.lm_loss},   {"local_l1", r.local_l1},
              {"local_ce", r.local_ce}};
}

double num_or_nan(const Json& j, const char* key, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) throw FormatError("metrics: " + where + ": missing key '" + key + "'");
  if (it->is_null()) return std::nan("");
  if (!it->is_number()) throw FormatError("metrics: " + where + ": '" + key + "' not a number");
  return it->get<double>();
}

}  // namespace

void write_metrics_jsonl(const std::string& path, const std::vector<EvalRecord>& records) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw FormatError("metrics: cannot open '" + path + "' for writing");
  for (const EvalRecord& r : records) f << record_to_json(r).dump() << '\n';
  if (!f) throw FormatError("metrics: write to '" + path + "' failed");
}

std::vector<EvalRecord> read_metrics_jsonl(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("metrics: cannot open '" + path + "'");
  std::vector<EvalRecord> out;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::string where = path + ":" + std::to_string(lineno);
    Json j = Json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded() || !j.is_object()) {
      throw FormatError("metrics: " + where + ": not a JSON object");
    }
    EvalRecord r;
    r.step = static_cast<int64_t>(num_or_nan(j, "step", where));
    r.lr = static_cast<float>(num_or_nan(j, "lr", where));
    r.nll_old = num_or_nan(j, "nll_old", where);
    r.nll_new = num_or_nan(j, "nll_new", where);
    r.ppl_old = num_or_nan(j, "ppl_old", where);
    r.ppl_new = num_or_nan(j, "ppl_new", where);
    r.lm_loss = static_cast<float>(num_or_nan(j, "lm_loss", where));
    r.local_l1 = static_cast<float>(num_or_nan(j, "local_l1", where));
    r.local_ce = static_cast<float>(num_or_nan(j, "local_ce", where));
    out.push_back(r);
  }
  return out;
}

std::vector<TradeoffRow> tradeoff_table(const std::vector<std::string>& run_dirs) {
  namespace fs = std::filesystem;
  std::vector<TradeoffRow> rows;
  for (const std::string& dir : run_dirs) {
    RunConfig rc = load_run_config((fs::path(dir) / "run_config.json").string());
    std::string metrics_path = (fs::path(dir) / "metrics.jsonl").string();
    std::vector<EvalRecord> records = read_metrics_jsonl(metrics_path);
    if (records.empty()) {
      throw FormatError("metrics: " + metrics_path + ": no records");
    }
    const EvalRecord& last = records.back();
    TradeoffRow row;
    row.method = to_string(rc.extension.method);
    row.lr = rc.training.lr_peak;
    row.p = rc.training.p;
    row.alpha = rc.training.alpha;
    row.nll_old = last.nll_old;
    row.nll_new = last.nll_new;
    rows.push_back(row);
  }
  std::sort(rows.begin(), rows.end(), [](const TradeoffRow& a, const TradeoffRow& b) {
    return std::tie(a.method, a.lr, a.p, a.alpha, a.nll_old) <
           std::tie(b.method, b.lr, b.p, b.alpha, b.nll_old);
  });
  return rows;
}

void write_tradeoff_csv(const std::string& path, const std::vector<TradeoffRow>& rows) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw FormatError("tradeoff: cannot open '" + path + "' for writing");
  f << "method,lr,p,alpha,nll_old,nll_new\n";
  for (const TradeoffRow& r : rows) {
    f << r.method << ',' << num6(r.lr) << ',' << num6(r.p) << ',' << num6(r.alpha) << ','
      << num6(r.nll_old) << ',' << num6(r.nll_new) << '\n';
  }
  if (!f) throw FormatError("tradeoff: write to '" + path + "' failed");
}

std::string format_tradeoff_text(const std::vector<TradeoffRow>& rows) {
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-10s %-10s %-6s %-8s %-10s %-10s\n", "method", "lr", "p",
                "alpha", "nll_old", "nll_new");
  out << buf;
  for (const TradeoffRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-10s %-10.3g %-6.3g %-8.3g %-10.4f %-10.4f\n",
                  r.method.c_str(), r.lr, r.p, r.alpha, r.nll_old, r.nll_new);
    out << buf;
  }
  return out.str();
}

}  // namespace nres
