// nres: desk-scale laboratory for extending a pretrained language model to
// a new domain without forgetting the old one.
//
//   nres train-backbone  pretrain the transformer on the original language
//   nres extend          continue training with finetune / LoRA / adapters
//   nres eval            heldout NLL and perplexity on both domains
//   nres spectra         singular-value spectra of the gating matrices
//   nres sweep           cross-product grid of extension runs + tradeoff table
//
// Exit codes: 0 success, 2 usage or config error, 3 runtime failure.

#include <atomic>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "nres/checkpoint.hpp"
#include "nres/errors.hpp"
#include "nres/eval.hpp"
#include "nres/extension.hpp"
#include "nres/model.hpp"
#include "nres/run_config.hpp"
#include "nres/training.hpp"

namespace fs = std::filesystem;
using nres::ConfigError;

namespace {

constexpr uint64_t kAttachSeedSalt = 1ull << 62;  // far above any step index

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
};

nres::RunConfig load_or_default(const std::string& config_path) {
  if (config_path.empty()) return nres::default_run_config();
  return nres::load_run_config(config_path);
}

void apply_env_seed(nres::RunConfig& cfg) {
  const char* env = std::getenv("NRES_SEED");
  if (!env || !*env) return;
  char* end = nullptr;
  unsigned long long v = std::strtoull(env, &end, 10);
  if (end == env || *end != '\0') {
    throw ConfigError(std::string("NRES_SEED ('") + env + "') is not an unsigned integer");
  }
  cfg.training.seed = static_cast<uint64_t>(v);
}

void ensure_out_dir(const std::string& out) {
  if (out.empty()) throw ConfigError("--out directory is required");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw ConfigError("cannot create output directory '" + out + "': " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw nres::FormatError("cannot open '" + path.string() + "' for writing");
  f << text;
}

void write_run_outputs(const std::string& out, const nres::RunConfig& cfg,
                       const nres::Checkpoint& ckpt, const std::vector<nres::EvalRecord>& evals) {
  ensure_out_dir(out);
  nres::save_checkpoint(ckpt, (fs::path(out) / "model.ckpt").string());
  nres::write_metrics_jsonl((fs::path(out) / "metrics.jsonl").string(), evals);
  write_text(fs::path(out) / "run_config.json", nres::run_config_to_json(cfg));
}

void print_final_eval(const std::vector<nres::EvalRecord>& evals) {
  if (evals.empty()) {
    std::cout << "no eval records (0 steps)\n";
    return;
  }
  const nres::EvalRecord& r = evals.back();
  std::cout << "final step " << r.step << ": nll_old=" << r.nll_old << " ppl_old=" << r.ppl_old
            << " nll_new=" << r.nll_new << " ppl_new=" << r.ppl_new << "\n";
}

// ---------------------------------------------------------------------------
// train-backbone

int cmd_train_backbone(const CommonOpts& opts, std::optional<int64_t> steps,
                       std::optional<double> lr, std::optional<int64_t> warmup,
                       std::optional<uint64_t> seed) {
  nres::RunConfig cfg = load_or_default(opts.config_path);
  // Pretraining defaults differ from extension runs; explicit config keys
  // and flags win over them.
  if (steps) cfg.training.total_steps = *steps;
  else if (!cfg.total_steps_explicit) cfg.training.total_steps = 4000;
  if (lr) cfg.training.lr_peak = static_cast<float>(*lr);
  else if (!cfg.lr_peak_explicit) cfg.training.lr_peak = nres::kPretrainPeakLr;
  if (warmup) cfg.training.warmup_steps = *warmup;
  else if (!cfg.warmup_explicit) cfg.training.warmup_steps = 200;
  if (seed) cfg.training.seed = *seed;
  apply_env_seed(cfg);
  validate(cfg);

  std::cout << "generating corpora (" << cfg.data.n_tokens << " tokens per language)...\n";
  nres::CorpusSet corpora = nres::build_corpora(cfg.data, cfg.training.seq_len);
  nres::BackboneModel model = nres::init_backbone(cfg.model, cfg.training.seed);
  std::cout << "pretraining " << nres::param_count(model) << " parameters for "
            << cfg.training.total_steps << " steps...\n";
  nres::TrainResult result = nres::train_backbone(model, corpora.original, cfg.training,
                                                  &corpora.novel);
  write_run_outputs(opts.out_dir, cfg, nres::make_checkpoint(model, result.steps_run),
                    result.evals);
  print_final_eval(result.evals);
  return 0;
}

// ---------------------------------------------------------------------------
// extend

struct ExtendFlags {
  std::string backbone_path;
  std::optional<std::string> method, gate, init_scheme;
  std::optional<bool> l1, ce;
  std::optional<double> alpha, p, lr, budget;
  std::optional<int64_t> steps, warmup, batch;
  std::optional<uint64_t> seed;
};

nres::RunConfig resolve_extend_config(const CommonOpts& opts, const ExtendFlags& f,
                                      bool* lr_resolved_from_method = nullptr) {
  nres::RunConfig cfg = load_or_default(opts.config_path);
  if (f.method) cfg.extension.method = nres::method_from_string(*f.method);
  if (f.gate) cfg.extension.gate = nres::gate_from_string(*f.gate);
  if (f.init_scheme) cfg.extension.init_scheme = nres::init_scheme_from_string(*f.init_scheme);
  if (f.l1) cfg.extension.use_l1_loss = *f.l1;
  if (f.ce) cfg.extension.use_ce_loss = *f.ce;
  if (f.alpha) cfg.extension.alpha = static_cast<float>(*f.alpha);
  if (f.budget) cfg.extension.budget_fraction = static_cast<float>(*f.budget);
  if (f.p) cfg.training.p = static_cast<float>(*f.p);
  if (f.steps) cfg.training.total_steps = *f.steps;
  if (f.warmup) cfg.training.warmup_steps = *f.warmup;
  if (f.batch) cfg.training.batch = *f.batch;
  if (f.seed) cfg.training.seed = *f.seed;
  bool from_method = false;
  if (f.lr) {
    cfg.training.lr_peak = static_cast<float>(*f.lr);
  } else if (!cfg.lr_peak_explicit) {
    cfg.training.lr_peak = nres::default_peak_lr(cfg.extension.method);
    from_method = true;
  }
  cfg.training.alpha = cfg.extension.alpha;
  apply_env_seed(cfg);
  if (lr_resolved_from_method) *lr_resolved_from_method = from_method;
  return cfg;
}

nres::BackboneModel load_backbone(const std::string& path) {
  if (path.empty()) throw ConfigError("--backbone checkpoint is required");
  return nres::backbone_from_checkpoint(nres::load_checkpoint(path));
}

int cmd_extend(const CommonOpts& opts, const ExtendFlags& flags) {
  nres::RunConfig cfg = resolve_extend_config(opts, flags);
  nres::BackboneModel backbone = load_backbone(flags.backbone_path);
  cfg.model = backbone.config;  // the checkpoint defines the architecture
  validate(cfg);

  std::cout << "generating corpora (" << cfg.data.n_tokens << " tokens per language)...\n";
  nres::CorpusSet corpora = nres::build_corpora(cfg.data, cfg.training.seq_len);
  nres::ExtendedModel model =
      nres::attach_extension(std::move(backbone), cfg.extension,
                             nres::Rng::mix(cfg.training.seed, kAttachSeedSalt));
  std::cout << "extending with method=" << to_string(cfg.extension.method)
            << " gate=" << to_string(cfg.extension.gate) << " ("
            << nres::param_count(model, /*trainable_only=*/true) << " trainable of "
            << nres::count_params(cfg.model).total << " backbone params) for "
            << cfg.training.total_steps << " steps at lr " << cfg.training.lr_peak << "...\n";
  nres::TrainResult result =
      nres::train_extension(model, corpora.original, corpora.proxy, corpora.novel, cfg.training);
  write_run_outputs(opts.out_dir, cfg, nres::make_checkpoint(model, result.steps_run),
                    result.evals);
  print_final_eval(result.evals);
  return 0;
}

// ---------------------------------------------------------------------------
// eval / spectra

int cmd_eval(const CommonOpts& opts, const std::string& ckpt_path) {
  if (ckpt_path.empty()) throw ConfigError("--checkpoint is required");
  nres::RunConfig cfg = load_or_default(opts.config_path);
  apply_env_seed(cfg);
  nres::Checkpoint ckpt = nres::load_checkpoint(ckpt_path);
  if (ckpt.model_config) cfg.model = *ckpt.model_config;
  validate(cfg);

  nres::CorpusSet corpora = nres::build_corpora(cfg.data, cfg.training.seq_len);
  nres::EvalRecord r;
  r.step = ckpt.step;
  if (ckpt.extension_config) {
    nres::ExtendedModel model = nres::extended_from_checkpoint(ckpt);
    nres::Perplexity old_p = nres::corpus_nll(model, corpora.original.heldout,
                                              cfg.training.seq_len);
    nres::Perplexity new_p = nres::corpus_nll(model, corpora.novel.heldout,
                                              cfg.training.seq_len);
    r.nll_old = old_p.nll;
    r.ppl_old = old_p.ppl;
    r.nll_new = new_p.nll;
    r.ppl_new = new_p.ppl;
  } else {
    nres::BackboneModel model = nres::backbone_from_checkpoint(ckpt);
    nres::Perplexity old_p = nres::corpus_nll(model, corpora.original.heldout,
                                              cfg.training.seq_len);
    nres::Perplexity new_p = nres::corpus_nll(model, corpora.novel.heldout,
                                              cfg.training.seq_len);
    r.nll_old = old_p.nll;
    r.ppl_old = old_p.ppl;
    r.nll_new = new_p.nll;
    r.ppl_new = new_p.ppl;
  }
  if (!opts.out_dir.empty()) {
    ensure_out_dir(opts.out_dir);
    nres::write_metrics_jsonl((fs::path(opts.out_dir) / "metrics.jsonl").string(), {r});
  }
  std::cout << "step " << r.step << ": nll_old=" << r.nll_old << " ppl_old=" << r.ppl_old
            << " nll_new=" << r.nll_new << " ppl_new=" << r.ppl_new << "\n";
  return 0;
}

int cmd_spectra(const CommonOpts& opts, const std::string& ckpt_path) {
  if (ckpt_path.empty()) throw ConfigError("--checkpoint is required");
  nres::Checkpoint ckpt = nres::load_checkpoint(ckpt_path);
  std::vector<nres::SpectrumEntry> entries;
  if (ckpt.extension_config) {
    entries = nres::gating_spectra(nres::extended_from_checkpoint(ckpt));
  } else {
    entries = nres::gating_spectra(nres::backbone_from_checkpoint(ckpt));
  }
  if (!opts.out_dir.empty()) {
    ensure_out_dir(opts.out_dir);
    nres::write_spectra_csv((fs::path(opts.out_dir) / "spectra.csv").string(), entries);
  }
  for (const nres::SpectrumEntry& e : entries) {
    std::cout << e.owner << " layer " << e.layer << ": skewness=" << e.skewness
              << (e.zero_matrix ? " (zero matrix)" : "") << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepRun {
  std::string dir;
  nres::RunConfig cfg;
};

nres::ExtensionConfig preset_extension(const std::string& name) {
  nres::ExtensionConfig e;
  if (name == "finetune") {
    e.method = nres::Method::kFinetune;
    e.gate = nres::GateKind::kNone;
    e.use_l1_loss = e.use_ce_loss = false;
  } else if (name == "lora") {
    e.method = nres::Method::kLora;
    e.gate = nres::GateKind::kNone;
    e.use_l1_loss = e.use_ce_loss = false;
  } else if (name == "adapter") {
    // Vanilla parallel adapter: no gate, no local losses, He init.
    e.method = nres::Method::kAdapter;
    e.gate = nres::GateKind::kNone;
    e.use_l1_loss = e.use_ce_loss = false;
    e.init_scheme = nres::InitScheme::kHe;
  } else if (name == "neutral") {
    // Gated adapter with the l1 local loss and low-variance init.
    e.method = nres::Method::kAdapter;
    e.gate = nres::GateKind::kRelu;
    e.use_l1_loss = true;
    e.use_ce_loss = false;
    e.init_scheme = nres::InitScheme::kLowVariance;
  } else {
    throw ConfigError("sweep: unknown method preset '" + name +
                      "' (expected finetune|lora|adapter|neutral or an object)");
  }
  return e;
}

std::string format_run_dir(size_t idx, const nres::RunConfig& cfg) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "run_%03zu_%s_lr%g_p%g_a%g_b%g", idx,
                to_string(cfg.extension.method).c_str(), cfg.training.lr_peak, cfg.training.p,
                cfg.training.alpha, cfg.extension.budget_fraction);
  return buf;
}

int cmd_sweep(const CommonOpts& opts, const std::string& grid_path,
              const std::string& backbone_path, int64_t jobs) {
  if (grid_path.empty()) throw ConfigError("--grid file is required");
  std::ifstream gf(grid_path);
  if (!gf) throw ConfigError("sweep: cannot open grid file '" + grid_path + "'");
  std::string text((std::istreambuf_iterator<char>(gf)), std::istreambuf_iterator<char>());
  nlohmann::json grid = nlohmann::json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (grid.is_discarded() || !grid.is_object()) {
    throw ConfigError("sweep: '" + grid_path + "' is not a JSON object");
  }
  for (auto it = grid.begin(); it != grid.end(); ++it) {
    std::string k = it.key();
    if (k != "backbone" && k != "base" && k != "methods" && k != "lrs" && k != "alphas" &&
        k != "ps" && k != "budgets") {
      throw ConfigError("sweep: unknown grid key '" + k + "'");
    }
  }

  std::string bb_path = backbone_path;
  if (bb_path.empty() && grid.contains("backbone")) {
    bb_path = grid["backbone"].get<std::string>();
  }
  nres::BackboneModel backbone = load_backbone(bb_path);

  nres::RunConfig base = grid.contains("base")
                             ? nres::run_config_from_json_text(grid["base"].dump(),
                                                               grid_path + ":base")
                             : nres::default_run_config();
  apply_env_seed(base);
  base.model = backbone.config;

  std::vector<nres::ExtensionConfig> methods;
  if (grid.contains("methods")) {
    for (const auto& m : grid["methods"]) {
      if (m.is_string()) {
        methods.push_back(preset_extension(m.get<std::string>()));
      } else if (m.is_object()) {
        nres::RunConfig tmp = nres::default_run_config();
        tmp.extension = base.extension;
        nlohmann::json wrapper{{"extension", m}};
        nres::RunConfig parsed =
            nres::run_config_from_json_text(wrapper.dump(), grid_path + ":methods");
        methods.push_back(parsed.extension);
      } else {
        throw ConfigError("sweep: methods entries must be preset strings or objects");
      }
    }
  } else {
    methods.push_back(base.extension);
  }

  auto num_list = [&](const char* key, double fallback) {
    std::vector<double> vals;
    if (grid.contains(key)) {
      for (const auto& v : grid[key]) {
        if (!v.is_number()) throw ConfigError(std::string("sweep: ") + key + " must be numbers");
        vals.push_back(v.get<double>());
      }
      if (vals.empty()) throw ConfigError(std::string("sweep: ") + key + " must not be empty");
    } else {
      vals.push_back(fallback);
    }
    return vals;
  };
  std::vector<double> lrs = num_list("lrs", -1.0);  // -1: per-method default
  std::vector<double> alphas = num_list("alphas", base.extension.alpha);
  std::vector<double> ps = num_list("ps", base.training.p);
  std::vector<double> budgets = num_list("budgets", base.extension.budget_fraction);

  ensure_out_dir(opts.out_dir);
  std::vector<SweepRun> runs;
  for (const nres::ExtensionConfig& method : methods) {
    for (double budget : budgets) {
      for (double p : ps) {
        for (double alpha : alphas) {
          for (double lr : lrs) {
            nres::RunConfig cfg = base;
            cfg.extension = method;
            cfg.extension.alpha = static_cast<float>(alpha);
            cfg.extension.budget_fraction = static_cast<float>(budget);
            cfg.training.p = static_cast<float>(p);
            cfg.training.alpha = cfg.extension.alpha;
            cfg.training.lr_peak = lr > 0.0 ? static_cast<float>(lr)
                                            : nres::default_peak_lr(cfg.extension.method);
            validate(cfg);
            SweepRun run;
            run.dir = (fs::path(opts.out_dir) / format_run_dir(runs.size(), cfg)).string();
            run.cfg = cfg;
            runs.push_back(std::move(run));
          }
        }
      }
    }
  }

  std::cout << "sweep: " << runs.size() << " runs\n";
  nres::CorpusSet corpora = nres::build_corpora(base.data, base.training.seq_len);

  if (jobs < 1) {
    jobs = static_cast<int64_t>(std::max(1u, std::thread::hardware_concurrency()));
  }
  std::atomic<size_t> cursor{0};
  std::mutex io_mutex;
  std::exception_ptr first_error;
  auto worker = [&]() {
    for (;;) {
      size_t i = cursor.fetch_add(1);
      if (i >= runs.size()) return;
      const SweepRun& run = runs[i];
      try {
        nres::ExtendedModel model = nres::attach_extension(
            backbone, run.cfg.extension,
            nres::Rng::mix(run.cfg.training.seed, kAttachSeedSalt));
        nres::TrainResult result = nres::train_extension(model, corpora.original, corpora.proxy,
                                                         corpora.novel, run.cfg.training);
        write_run_outputs(run.dir, run.cfg, nres::make_checkpoint(model, result.steps_run),
                          result.evals);
        std::lock_guard<std::mutex> lock(io_mutex);
        std::cout << "done " << run.dir;
        if (!result.evals.empty()) {
          std::cout << ": nll_old=" << result.evals.back().nll_old
                    << " nll_new=" << result.evals.back().nll_new;
        }
        std::cout << "\n";
      } catch (...) {
        std::lock_guard<std::mutex> lock(io_mutex);
        if (!first_error) first_error = std::current_exception();
        cursor.store(runs.size());  // stop handing out work
        return;
      }
    }
  };
  if (jobs == 1 || runs.size() == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int64_t t = 0; t < std::min<int64_t>(jobs, static_cast<int64_t>(runs.size())); ++t) {
      pool.emplace_back(worker);
    }
    for (auto& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  std::vector<std::string> dirs;
  for (const SweepRun& run : runs) dirs.push_back(run.dir);
  std::vector<nres::TradeoffRow> table = nres::tradeoff_table(dirs);
  nres::write_tradeoff_csv((fs::path(opts.out_dir) / "tradeoff.csv").string(), table);
  std::cout << nres::format_tradeoff_text(table);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale learning-without-forgetting laboratory"};
  app.require_subcommand(1);

  CommonOpts train_opts, extend_opts, eval_opts, spectra_opts, sweep_opts;
  std::optional<int64_t> tb_steps, tb_warmup;
  std::optional<double> tb_lr;
  std::optional<uint64_t> tb_seed;
  ExtendFlags ext;
  std::string eval_ckpt, spectra_ckpt, grid_path, sweep_backbone;
  int64_t sweep_jobs = 0;

  CLI::App* tb = app.add_subcommand("train-backbone",
                                    "pretrain the backbone on the original language");
  tb->add_option("--config", train_opts.config_path, "run config JSON");
  tb->add_option("--out", train_opts.out_dir, "output directory")->required();
  tb->add_option("--steps", tb_steps, "training steps (default 4000)");
  tb->add_option("--lr", tb_lr, "peak learning rate (default 1e-3)");
  tb->add_option("--warmup", tb_warmup, "warmup steps (default 200)");
  tb->add_option("--seed", tb_seed, "RNG seed");

  CLI::App* ex = app.add_subcommand("extend", "train an extension on the new language");
  ex->add_option("--backbone", ext.backbone_path, "pretrained backbone checkpoint")->required();
  ex->add_option("--config", extend_opts.config_path, "run config JSON");
  ex->add_option("--out", extend_opts.out_dir, "output directory")->required();
  ex->add_option("--method", ext.method, "finetune|lora|adapter");
  ex->add_option("--gate", ext.gate, "none|sigmoid|relu");
  ex->add_option("--init", ext.init_scheme, "he|low_variance");
  ex->add_flag("--l1,!--no-l1", ext.l1, "l1 local loss on adapter outputs");
  ex->add_flag("--ce,!--no-ce", ext.ce, "cross-entropy gate loss");
  ex->add_option("--alpha", ext.alpha, "local loss weight");
  ex->add_option("--p", ext.p, "original-proxy mixture rate");
  ex->add_option("--lr", ext.lr, "peak learning rate (default per method)");
  ex->add_option("--budget", ext.budget, "trainable budget fraction");
  ex->add_option("--steps", ext.steps, "training steps");
  ex->add_option("--warmup", ext.warmup, "warmup steps");
  ex->add_option("--batch", ext.batch, "batch size");
  ex->add_option("--seed", ext.seed, "RNG seed");

  CLI::App* ev = app.add_subcommand("eval", "heldout NLL/perplexity on both domains");
  ev->add_option("--checkpoint", eval_ckpt, "model checkpoint")->required();
  ev->add_option("--config", eval_opts.config_path, "run config JSON");
  ev->add_option("--out", eval_opts.out_dir, "output directory (optional)");

  CLI::App* sp = app.add_subcommand("spectra", "gating-matrix singular value spectra");
  sp->add_option("--checkpoint", spectra_ckpt, "model checkpoint")->required();
  sp->add_option("--out", spectra_opts.out_dir, "output directory (optional)");

  CLI::App* sw = app.add_subcommand("sweep", "grid of extension runs + tradeoff table");
  sw->add_option("--grid", grid_path, "grid JSON file")->required();
  sw->add_option("--backbone", sweep_backbone, "backbone checkpoint (or grid key)");
  sw->add_option("--out", sweep_opts.out_dir, "output directory")->required();
  sw->add_option("--jobs", sweep_jobs, "parallel workers (default: cores)");

  try {
    app.parse(argc, argv);
    if (tb->parsed()) return cmd_train_backbone(train_opts, tb_steps, tb_lr, tb_warmup, tb_seed);
    if (ex->parsed()) return cmd_extend(extend_opts, ext);
    if (ev->parsed()) return cmd_eval(eval_opts, eval_ckpt);
    if (sp->parsed()) return cmd_spectra(spectra_opts, spectra_ckpt);
    if (sw->parsed()) return cmd_sweep(sweep_opts, grid_path, sweep_backbone, sweep_jobs);
    throw ConfigError("no subcommand given");
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
