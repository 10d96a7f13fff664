#include <cmath>
#include <cstring>
#include <limits>
#include <string>
#include <vector>

#include <doctest.h>

#include "nres/data.hpp"
#include "nres/errors.hpp"
#include "nres/eval.hpp"
#include "nres/extension.hpp"
#include "nres/model.hpp"
#include "nres/training.hpp"

namespace {

nres::ModelConfig tiny_config() {
  nres::ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.model_dim = 8;
  cfg.n_heads = 2;
  cfg.ffn_latent = 16;
  cfg.vocab_size = 256;
  cfg.max_seq_len = 16;
  return cfg;
}

nres::TrainConfig fast_train(int64_t steps, float lr) {
  nres::TrainConfig cfg;
  cfg.lr_peak = lr;
  cfg.warmup_steps = std::min<int64_t>(10, steps);
  cfg.total_steps = steps;
  cfg.batch = 4;
  cfg.seq_len = 16;
  cfg.eval_interval = 20;
  cfg.max_eval_tokens = 1024;
  return cfg;
}

nres::Corpus corpus_for(uint64_t seed, nres::Domain domain, uint64_t cipher = 0) {
  nres::SyntheticLanguageSpec spec;
  spec.kind = cipher == 0 ? nres::GeneratorKind::kMarkov2 : nres::GeneratorKind::kCipher;
  spec.seed = seed;
  spec.cipher_seed = cipher;
  return nres::generate_corpus(spec, 6000, 0.1f, 16, domain);
}

bool same_float(float a, float b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

bool same_record(const nres::EvalRecord& a, const nres::EvalRecord& b) {
  return a.step == b.step && same_float(a.lr, b.lr) && same_float(a.nll_old, b.nll_old) &&
         same_float(a.nll_new, b.nll_new) && same_float(a.ppl_old, b.ppl_old) &&
         same_float(a.ppl_new, b.ppl_new) && same_float(a.lm_loss, b.lm_loss) &&
         same_float(a.local_l1, b.local_l1) && same_float(a.local_ce, b.local_ce);
}

std::vector<float> backbone_bytes(const nres::BackboneModel& m) {
  std::vector<float> out;
  nres::visit_params(m, [&](const std::string&, const nres::Tensor& t) {
    out.insert(out.end(), t.data(), t.data() + t.numel());
  });
  return out;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("train config validation") {
  nres::TrainConfig cfg = fast_train(100, 1e-3f);
  CHECK_NOTHROW(nres::validate(cfg));

  auto broken = [&](auto&& mutate) {
    nres::TrainConfig c = fast_train(100, 1e-3f);
    mutate(c);
    return c;
  };
  CHECK_THROWS_AS(nres::validate(broken([](auto& c) { c.lr_peak = 0.0f; })), nres::ConfigError);
  CHECK_THROWS_AS(nres::validate(broken([](auto& c) { c.warmup_steps = -1; })), nres::ConfigError);
  CHECK_THROWS_AS(nres::validate(broken([](auto& c) { c.total_steps = -1; })), nres::ConfigError);
  CHECK_THROWS_AS(nres::validate(broken([](auto& c) { c.warmup_steps = 101; })),
                  nres::ConfigError);
  CHECK_THROWS_AS(nres::validate(broken([](auto& c) { c.batch = 0; })), nres::ConfigError);
  CHECK_THROWS_AS(nres::validate(broken([](auto& c) { c.seq_len = 1; })), nres::ConfigError);
  CHECK_THROWS_AS(nres::validate(broken([](auto& c) { c.alpha = -1.0f; })), nres::ConfigError);
  CHECK_THROWS_AS(nres::validate(broken([](auto& c) { c.p = 1.5f; })), nres::ConfigError);
  CHECK_THROWS_AS(nres::validate(broken([](auto& c) { c.weight_decay = -0.1f; })),
                  nres::ConfigError);
  CHECK_THROWS_AS(nres::validate(broken([](auto& c) { c.grad_clip = 0.0f; })), nres::ConfigError);
  CHECK_THROWS_AS(nres::validate(broken([](auto& c) { c.eval_interval = 0; })),
                  nres::ConfigError);

  nres::TrainConfig none = fast_train(0, 1e-3f);
  none.warmup_steps = 0;
  CHECK_NOTHROW(nres::validate(none));
}

TEST_CASE("lr schedule: linear warmup, cosine decay to a 10% floor") {
  const float peak = 2e-4f;
  CHECK(nres::lr_schedule(0, peak, 100, 2000) == 0.0f);
  CHECK(nres::lr_schedule(50, peak, 100, 2000) == doctest::Approx(0.5 * peak));
  CHECK(nres::lr_schedule(100, peak, 100, 2000) == doctest::Approx(peak));
  CHECK(nres::lr_schedule(2000, peak, 100, 2000) == doctest::Approx(0.1 * peak));
  // Cosine midpoint: floor + 0.45 * peak.
  CHECK(nres::lr_schedule(1050, peak, 100, 2000) == doctest::Approx(0.55 * peak));
  // Monotone decay after warmup.
  float prev = nres::lr_schedule(100, peak, 100, 2000);
  for (int64_t s = 200; s <= 2000; s += 100) {
    float lr = nres::lr_schedule(s, peak, 100, 2000);
    CHECK(lr < prev);
    prev = lr;
  }
  // Degenerate spans collapse to the peak after warmup.
  CHECK(nres::lr_schedule(10, peak, 10, 10) == doctest::Approx(peak));
  CHECK(nres::lr_schedule(0, peak, 0, 0) == doctest::Approx(peak));

  CHECK_THROWS_AS(nres::lr_schedule(-1, peak, 100, 2000), nres::ContractError);
  CHECK_THROWS_AS(nres::lr_schedule(2001, peak, 100, 2000), nres::ContractError);
}

TEST_CASE("adamw: first-step oracle, decay, scale folding, contracts") {
  SUBCASE("fresh step with unit gradient moves by about -lr") {
    nres::Tensor p({1}, {1.0f});
    nres::Tensor g({1}, {1.0f});
    nres::AdamW opt({"w"}, {&p});
    opt.step({&p}, {&g}, 0.1f);
    // mhat = vhat = 1 after bias correction, so the update is lr/(1 + eps).
    CHECK(p.at(0) == doctest::Approx(0.9).epsilon(1e-6));
    CHECK(opt.steps_taken() == 1);
  }

  SUBCASE("zero gradients leave only the decoupled decay") {
    nres::Tensor p({2}, {2.0f, -4.0f});
    nres::Tensor g = nres::Tensor::zeros({2});
    nres::AdamW opt({"w"}, {&p}, 0.9f, 0.95f, 1e-8f, /*weight_decay=*/0.5f);
    opt.step({&p}, {&g}, 0.1f);
    CHECK(p.at(0) == doctest::Approx(2.0 * 0.95).epsilon(1e-6));
    CHECK(p.at(1) == doctest::Approx(-4.0 * 0.95).epsilon(1e-6));
  }

  SUBCASE("grad_scale folds the clip factor into the moments") {
    nres::Tensor p1({2}, {1.0f, -1.0f});
    nres::Tensor p2({2}, {1.0f, -1.0f});
    nres::Tensor g({2}, {4.0f, -2.0f});
    nres::Tensor g_scaled({2}, {2.0f, -1.0f});
    nres::AdamW o1({"w"}, {&p1});
    nres::AdamW o2({"w"}, {&p2});
    o1.step({&p1}, {&g}, 0.05f, 0.5f);
    o2.step({&p2}, {&g_scaled}, 0.05f, 1.0f);
    CHECK(p1.at(0) == p2.at(0));
    CHECK(p1.at(1) == p2.at(1));
  }

  SUBCASE("three steps match an f64 re-simulation") {
    nres::Tensor p({2}, {0.5f, -0.25f});
    nres::AdamW opt({"w"}, {&p}, 0.9f, 0.95f, 1e-8f, 0.1f);
    double pd[2] = {0.5, -0.25};
    double m[2] = {0, 0}, v[2] = {0, 0};
    const float lr = 0.02f;
    for (int t = 1; t <= 3; ++t) {
      nres::Tensor g({2}, {0.3f * t, -0.1f * t});
      opt.step({&p}, {&g}, lr);
      double bc1 = 1.0 - std::pow(0.9, t), bc2 = 1.0 - std::pow(0.95, t);
      for (int j = 0; j < 2; ++j) {
        double gj = g.at(j);
        pd[j] *= 1.0 - lr * 0.1;
        m[j] = 0.9 * m[j] + 0.1 * gj;
        v[j] = 0.95 * v[j] + 0.05 * gj * gj;
        pd[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + 1e-8);
      }
    }
    CHECK(p.at(0) == doctest::Approx(pd[0]).epsilon(1e-5));
    CHECK(p.at(1) == doctest::Approx(pd[1]).epsilon(1e-5));
  }

  SUBCASE("non-finite gradients are rejected by parameter name") {
    nres::Tensor p({1}, {1.0f});
    nres::Tensor g({1}, {std::numeric_limits<float>::quiet_NaN()});
    nres::AdamW opt({"adapters.0.a_in"}, {&p});
    CHECK_THROWS_WITH_AS(opt.step({&p}, {&g}, 0.1f), doctest::Contains("adapters.0.a_in"),
                         nres::NumericError);
  }

  SUBCASE("shape and arity contracts") {
    nres::Tensor p({2}, {1.0f, 1.0f});
    CHECK_THROWS_AS(nres::AdamW({"a", "b"}, {&p}), nres::DimensionError);
    nres::AdamW opt({"w"}, {&p});
    nres::Tensor g({2}, {0.0f, 0.0f});
    CHECK_THROWS_AS(opt.step({&p, &p}, {&g, &g}, 0.1f), nres::DimensionError);
    nres::Tensor wrong({3}, {0.0f, 0.0f, 0.0f});
    CHECK_THROWS_AS(opt.step({&wrong}, {&g}, 0.1f), nres::DimensionError);
  }
}

TEST_CASE("global_grad_norm accumulates across tensors") {
  nres::Tensor a({1}, {3.0f});
  nres::Tensor b({1}, {4.0f});
  CHECK(nres::global_grad_norm({&a, &b}) == doctest::Approx(5.0));
  CHECK(nres::global_grad_norm({}) == 0.0);
}

TEST_CASE("zero-step runs change nothing and report nothing") {
  nres::BackboneModel model = nres::init_backbone(tiny_config(), 3);
  std::vector<float> before = backbone_bytes(model);
  nres::TrainConfig cfg = fast_train(0, 1e-3f);
  cfg.warmup_steps = 0;
  nres::Corpus corpus = corpus_for(5, nres::Domain::kOriginal);
  nres::TrainResult result = nres::train_backbone(model, corpus, cfg);
  CHECK(result.steps_run == 0);
  CHECK(result.evals.empty());
  CHECK(backbone_bytes(model) == before);
}

TEST_CASE("pretraining reduces heldout NLL on its corpus") {
  nres::BackboneModel model = nres::init_backbone(tiny_config(), 3);
  nres::Corpus corpus = corpus_for(5, nres::Domain::kOriginal);
  double before = nres::corpus_nll(model, corpus.heldout, 16).nll;
  nres::TrainConfig cfg = fast_train(80, 3e-3f);
  nres::TrainResult result = nres::train_backbone(model, corpus, cfg);
  REQUIRE_FALSE(result.evals.empty());
  const nres::EvalRecord& last = result.evals.back();
  CHECK(last.step == 80);
  CHECK(last.nll_old < before - 0.05);
  CHECK(std::isnan(last.nll_new));  // no monitor corpus

  // Eval cadence: every 20 steps plus the final step.
  REQUIRE(result.evals.size() == 4);
  CHECK(result.evals[0].step == 20);
  CHECK(result.evals[2].step == 60);
}

TEST_CASE("backbone training reports the monitor corpus when given") {
  nres::BackboneModel model = nres::init_backbone(tiny_config(), 3);
  nres::Corpus corpus = corpus_for(5, nres::Domain::kOriginal);
  nres::Corpus novel = corpus_for(5, nres::Domain::kNew, 9);
  nres::TrainConfig cfg = fast_train(20, 1e-3f);
  nres::TrainResult result = nres::train_backbone(model, corpus, cfg, &novel);
  REQUIRE_FALSE(result.evals.empty());
  CHECK(std::isfinite(result.evals.back().nll_new));
}

TEST_CASE("extension training leaves the backbone bitwise frozen") {
  nres::BackboneModel pretrained = nres::init_backbone(tiny_config(), 3);
  nres::Corpus original = corpus_for(5, nres::Domain::kOriginal);
  nres::Corpus proxy = corpus_for(5, nres::Domain::kOriginal, 0);
  nres::Corpus novel = corpus_for(5, nres::Domain::kNew, 9);

  for (nres::Method method : {nres::Method::kAdapter, nres::Method::kLora}) {
    CAPTURE(nres::to_string(method));
    nres::ExtensionConfig ec;
    ec.method = method;
    ec.gate = method == nres::Method::kAdapter ? nres::GateKind::kRelu : nres::GateKind::kNone;
    ec.use_l1_loss = method == nres::Method::kAdapter;
    ec.use_ce_loss = false;
    nres::ExtendedModel model = nres::attach_extension(pretrained, ec, 7);
    std::vector<float> before = backbone_bytes(model.backbone);
    std::vector<float> ext_before;
    for (auto& ref : nres::trainable_parameters(model)) {
      ext_before.insert(ext_before.end(), ref.tensor->data(),
                        ref.tensor->data() + ref.tensor->numel());
    }

    nres::TrainConfig cfg = fast_train(60, 2e-3f);
    nres::TrainResult result = nres::train_extension(model, original, proxy, novel, cfg);
    CHECK(result.steps_run == 60);
    CHECK(backbone_bytes(model.backbone) == before);

    // The trainable set did move.
    std::vector<float> ext_after;
    for (auto& ref : nres::trainable_parameters(model)) {
      ext_after.insert(ext_after.end(), ref.tensor->data(),
                       ref.tensor->data() + ref.tensor->numel());
    }
    CHECK(ext_after != ext_before);
  }
}

TEST_CASE("extension training improves the new domain") {
  nres::BackboneModel backbone = nres::init_backbone(tiny_config(), 3);
  nres::Corpus original = corpus_for(5, nres::Domain::kOriginal);
  nres::TrainConfig pre = fast_train(60, 3e-3f);
  nres::train_backbone(backbone, original, pre);

  nres::Corpus novel = corpus_for(5, nres::Domain::kNew, 9);
  nres::ExtensionConfig ec;  // defaults: adapter, relu gate, l1
  nres::ExtendedModel model = nres::attach_extension(backbone, ec, 11);
  double before = nres::corpus_nll(model, novel.heldout, 16).nll;

  nres::TrainConfig cfg = fast_train(250, 5e-3f);
  cfg.p = 0.1f;
  nres::TrainResult result = nres::train_extension(model, original, original, novel, cfg);
  CHECK(result.evals.back().nll_new < before - 0.05);
}

TEST_CASE("identical configs reproduce identical trajectories") {
  nres::BackboneModel backbone = nres::init_backbone(tiny_config(), 3);
  nres::Corpus original = corpus_for(5, nres::Domain::kOriginal);
  nres::Corpus novel = corpus_for(5, nres::Domain::kNew, 9);
  nres::ExtensionConfig ec;
  nres::TrainConfig cfg = fast_train(40, 2e-3f);

  nres::ExtendedModel m1 = nres::attach_extension(backbone, ec, 11);
  nres::ExtendedModel m2 = nres::attach_extension(backbone, ec, 11);
  nres::TrainResult r1 = nres::train_extension(m1, original, original, novel, cfg);
  nres::TrainResult r2 = nres::train_extension(m2, original, original, novel, cfg);
  REQUIRE(r1.evals.size() == r2.evals.size());
  for (size_t i = 0; i < r1.evals.size(); ++i) CHECK(same_record(r1.evals[i], r2.evals[i]));
  for (size_t i = 0; i < m1.adapters.size(); ++i) {
    CHECK(std::memcmp(m1.adapters[i].a_out.data(), m2.adapters[i].a_out.data(),
                      sizeof(float) * m1.adapters[i].a_out.numel()) == 0);
  }

  // A different training seed takes a different path.
  nres::ExtendedModel m3 = nres::attach_extension(backbone, ec, 11);
  nres::TrainConfig other = cfg;
  other.seed = 2;
  nres::TrainResult r3 = nres::train_extension(m3, original, original, novel, other);
  CHECK_FALSE(same_record(r1.evals.back(), r3.evals.back()));
}

TEST_CASE("a poisoned forward pass raises a numeric error naming the step") {
  nres::BackboneModel backbone = nres::init_backbone(tiny_config(), 3);
  backbone.head.fill(std::numeric_limits<float>::infinity());
  nres::Corpus original = corpus_for(5, nres::Domain::kOriginal);
  nres::TrainConfig cfg = fast_train(10, 1e-3f);
  CHECK_THROWS_WITH_AS(nres::train_backbone(backbone, original, cfg),
                       doctest::Contains("step 1"), nres::NumericError);
}

}  // TEST_SUITE("training")
