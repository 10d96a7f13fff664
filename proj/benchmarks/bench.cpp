#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "nres/data.hpp"
#include "nres/eval.hpp"
#include "nres/extension.hpp"
#include "nres/model.hpp"
#include "nres/rng.hpp"
#include "nres/run_config.hpp"
#include "nres/svd.hpp"
#include "nres/tape.hpp"
#include "nres/training.hpp"

namespace {

nres::Tensor gaussian(std::vector<int64_t> shape, uint64_t seed) {
  nres::Tensor t(shape);
  nres::Rng rng(seed);
  for (int64_t i = 0; i < t.numel(); ++i) {
    t.data()[i] = static_cast<float>(rng.normal());
  }
  return t;
}

nres::TokenBatch desk_batch(const nres::ModelConfig& cfg, int64_t batch, int64_t seq,
                            uint64_t seed) {
  nres::TokenBatch b;
  b.batch = batch;
  b.seq = seq;
  nres::Rng rng(seed);
  for (int64_t i = 0; i < batch * seq; ++i) {
    b.tokens.push_back(static_cast<int32_t>(rng.uniform_int(cfg.vocab_size)));
  }
  return b;
}

// Tape matmul at the shapes a desk-scale training step spends its time on:
// rows = batch * (seq - 1) tokens, then (in, out) per projection.
void BM_TapeMatmul(benchmark::State& state) {
  const int64_t rows = state.range(0), inner = state.range(1), cols = state.range(2);
  nres::Tensor a = gaussian({rows, inner}, 1);
  nres::Tensor b = gaussian({inner, cols}, 2);
  for (auto _ : state) {
    nres::Tape tape;
    nres::Value va = tape.constant(a);
    nres::Value vb = tape.constant(b);
    nres::Value c = tape.matmul(va, vb);
    benchmark::DoNotOptimize(tape.value(c).data());
  }
  state.SetItemsProcessed(state.iterations() * rows * inner * cols);
}
BENCHMARK(BM_TapeMatmul)
    ->Args({2032, 64, 176})
    ->Args({2032, 176, 64})
    ->Args({2032, 64, 256});

// Forward plus backward through a single matmul of FFN size.
void BM_TapeMatmulBackward(benchmark::State& state) {
  nres::Tensor a = gaussian({2032, 64}, 3);
  nres::Tensor b = gaussian({64, 176}, 4);
  std::vector<int32_t> targets(2032, 0);
  for (auto _ : state) {
    nres::Tape tape;
    nres::Value va = tape.leaf(a);
    nres::Value vb = tape.leaf(b);
    nres::Value c = tape.matmul(va, vb);
    nres::Value loss = tape.softmax_cross_entropy(c, targets);
    tape.backward(loss);
    benchmark::DoNotOptimize(tape.grad(vb).data());
  }
}
BENCHMARK(BM_TapeMatmulBackward);

// Full inference pass of the default two-layer backbone on one training
// batch worth of tokens.
void BM_BackboneForward(benchmark::State& state) {
  nres::ModelConfig cfg = nres::default_run_config().model;
  nres::BackboneModel model = nres::init_backbone(cfg, 5);
  nres::TokenBatch batch = desk_batch(cfg, 16, 127, 6);
  for (auto _ : state) {
    nres::Tensor logits = nres::forward_logits(model, batch);
    benchmark::DoNotOptimize(logits.data());
  }
  state.SetItemsProcessed(state.iterations() * batch.batch * batch.seq);
}
BENCHMARK(BM_BackboneForward);

// A short gated-adapter extension run: 4 optimizer steps plus the final
// heldout evaluation, on generated 50k-token corpora.
void BM_ExtensionRun(benchmark::State& state) {
  nres::RunConfig base = nres::default_run_config();
  base.data.n_tokens = 50000;
  base.data.heldout_fraction = 0.02f;
  nres::CorpusSet corpora = nres::build_corpora(base.data, base.training.seq_len);
  nres::BackboneModel backbone = nres::init_backbone(base.model, 7);
  nres::TrainConfig tc = base.training;
  tc.total_steps = 4;
  tc.warmup_steps = 2;
  tc.eval_interval = 100;
  tc.max_eval_tokens = 1024;
  for (auto _ : state) {
    nres::ExtendedModel model = nres::attach_extension(backbone, base.extension, 8);
    nres::TrainResult res =
        nres::train_extension(model, corpora.original, corpora.proxy, corpora.novel, tc);
    benchmark::DoNotOptimize(res.evals.data());
  }
  state.SetItemsProcessed(state.iterations() * tc.total_steps);
}
BENCHMARK(BM_ExtensionRun)->Unit(benchmark::kMillisecond);

// Heldout NLL of the backbone over a 4k-token stream.
void BM_CorpusNll(benchmark::State& state) {
  nres::ModelConfig cfg = nres::default_run_config().model;
  nres::BackboneModel model = nres::init_backbone(cfg, 9);
  nres::SyntheticLanguageSpec spec;
  nres::Corpus corpus = nres::generate_corpus(spec, 4096, 0.0f, 128, nres::Domain::kOriginal);
  for (auto _ : state) {
    nres::Perplexity p = nres::corpus_nll(model, corpus.train, 128);
    benchmark::DoNotOptimize(p.nll);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(corpus.train.size()));
}
BENCHMARK(BM_CorpusNll)->Unit(benchmark::kMillisecond);

// Second-order Markov sampling throughput.
void BM_CorpusGeneration(benchmark::State& state) {
  nres::SyntheticLanguageSpec spec;
  spec.seed = 10;
  for (auto _ : state) {
    nres::Corpus c = nres::generate_corpus(spec, 100000, 0.0f, 128, nres::Domain::kOriginal);
    benchmark::DoNotOptimize(c.train.data());
  }
  state.SetItemsProcessed(state.iterations() * 100000);
}
BENCHMARK(BM_CorpusGeneration)->Unit(benchmark::kMillisecond);

// Singular values of a gate-matrix-sized rectangle.
void BM_SingularValues(benchmark::State& state) {
  nres::Tensor w = gaussian({64, 176}, 11);
  for (auto _ : state) {
    std::vector<double> sv = nres::singular_values(w);
    benchmark::DoNotOptimize(sv.data());
  }
}
BENCHMARK(BM_SingularValues)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
