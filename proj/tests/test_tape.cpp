#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "nres/errors.hpp"
#include "nres/rng.hpp"
#include "nres/tape.hpp"
#include "test_util.hpp"

using nres::Activation;
using nres::Tape;
using nres::Tensor;
using nres::Value;
using testutil::rel_err;

namespace {

Tensor mat(std::vector<int64_t> shape, std::vector<float> data) {
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace

TEST_SUITE("tape") {

TEST_CASE("matmul: identity, zeros, and the hand oracle") {
  Tape tape;
  Value eye = tape.constant(mat({2, 2}, {1, 0, 0, 1}));
  Value a = tape.constant(mat({2, 2}, {1, 2, 3, 4}));
  const Tensor& ia = tape.value(tape.matmul(eye, a));
  for (int64_t i = 0; i < 4; ++i) CHECK(ia.at(i) == tape.value(a).at(i));

  Value z = tape.constant(Tensor::zeros({2, 3}));
  Value any = tape.constant(mat({3, 4}, std::vector<float>(12, 7.0f)));
  const Tensor& za = tape.value(tape.matmul(z, any));
  CHECK(za.shape() == std::vector<int64_t>{2, 4});
  for (int64_t i = 0; i < za.numel(); ++i) CHECK(za.at(i) == 0.0f);

  Value b = tape.constant(mat({2, 2}, {5, 6, 7, 8}));
  const Tensor& ab = tape.value(tape.matmul(a, b));
  CHECK(ab.at(0, 0) == 19.0f);
  CHECK(ab.at(0, 1) == 22.0f);
  CHECK(ab.at(1, 0) == 43.0f);
  CHECK(ab.at(1, 1) == 50.0f);
}

TEST_CASE("matmul: shape mismatch names both shapes") {
  Tape tape;
  Value a = tape.constant(Tensor::zeros({2, 3}));
  Value b = tape.constant(Tensor::zeros({4, 2}));
  CHECK_THROWS_WITH_AS(tape.matmul(a, b), doctest::Contains("[2, 3]"), nres::DimensionError);
  CHECK_THROWS_WITH_AS(tape.matmul(a, b), doctest::Contains("[4, 2]"), nres::DimensionError);
}

TEST_CASE("elementwise: mul oracle, add/mul trivials, scalar broadcast") {
  Tape tape;
  Value x = tape.constant(mat({3}, {1, -2, 3}));
  Value y = tape.constant(mat({3}, {4, 5, -6}));
  const Tensor& m = tape.value(tape.mul(x, y));
  CHECK(m.at(0) == 4.0f);
  CHECK(m.at(1) == -10.0f);
  CHECK(m.at(2) == -18.0f);

  Value zeros = tape.constant(Tensor::zeros({3}));
  const Tensor& mz = tape.value(tape.mul(x, zeros));
  for (int64_t i = 0; i < 3; ++i) CHECK(mz.at(i) == 0.0f);
  const Tensor& az = tape.value(tape.add(x, zeros));
  for (int64_t i = 0; i < 3; ++i) CHECK(az.at(i) == tape.value(x).at(i));

  // One-element b broadcasts over a.
  Value bias = tape.constant(Tensor::scalar(0.5f));
  const Tensor& ab = tape.value(tape.add(x, bias));
  CHECK(ab.at(0) == 1.5f);
  CHECK(ab.at(1) == -1.5f);
  CHECK(ab.at(2) == 3.5f);

  const Tensor& sc = tape.value(tape.scale(x, -2.0f));
  CHECK(sc.at(0) == -2.0f);
  CHECK(sc.at(1) == 4.0f);
  CHECK(sc.at(2) == -6.0f);

  Value bad = tape.constant(Tensor::zeros({4}));
  CHECK_THROWS_AS(tape.add(x, bad), nres::DimensionError);
  CHECK_THROWS_AS(tape.mul(x, bad), nres::DimensionError);
}

TEST_CASE("activations: fixed points and the silu oracle") {
  Tape tape;
  Value x = tape.constant(mat({3}, {-1, 0, 2}));
  const Tensor& r = tape.value(tape.activation(Activation::kRelu, x));
  CHECK(r.at(0) == 0.0f);
  CHECK(r.at(1) == 0.0f);
  CHECK(r.at(2) == 2.0f);

  Value zero = tape.constant(Tensor::scalar(0.0f));
  CHECK(tape.value(tape.activation(Activation::kSigmoid, zero)).at(0) == 0.5f);

  Value one = tape.constant(Tensor::scalar(1.0f));
  // silu(1) = 1 * sigmoid(1) = 0.731059 to 6 decimals.
  CHECK(rel_err(tape.value(tape.activation(Activation::kSilu, one)).at(0), 0.731059) < 1e-5);

  // gelu(x) against the tanh-approximation formula evaluated in f64.
  double xv = 0.7;
  double inner = std::sqrt(2.0 / 3.14159265358979323846) * (xv + 0.044715 * xv * xv * xv);
  double expected = 0.5 * xv * (1.0 + std::tanh(inner));
  Value g = tape.constant(Tensor::scalar(static_cast<float>(xv)));
  CHECK(rel_err(tape.value(tape.activation(Activation::kGelu, g)).at(0), expected) < 1e-5);
}

TEST_CASE("activation string conversion round-trips and rejects junk") {
  for (const char* name : {"silu", "gelu", "relu", "sigmoid"}) {
    CHECK(nres::to_string(nres::activation_from_string(name)) == name);
  }
  CHECK_THROWS_AS(nres::activation_from_string("tanh"), nres::ConfigError);
}

TEST_CASE("rms_norm: constant rows, zeros, and the (3,4) oracle") {
  Tape tape;
  Value w = tape.constant(Tensor::full({4}, 1.0f));
  Value c = tape.constant(mat({1, 4}, {2, 2, 2, 2}));
  const Tensor& cn = tape.value(tape.rms_norm(c, w, 1e-12f));
  for (int64_t i = 0; i < 4; ++i) CHECK(rel_err(cn.at(i), 1.0) < 1e-5);

  Value z = tape.constant(Tensor::zeros({1, 4}));
  const Tensor& zn = tape.value(tape.rms_norm(z, w, 1e-5f));
  for (int64_t i = 0; i < 4; ++i) CHECK(zn.at(i) == 0.0f);

  // rms of (3, 4) is sqrt(12.5); 3/rms = 0.848528, 4/rms = 1.131371.
  Value w2 = tape.constant(Tensor::full({2}, 1.0f));
  Value v = tape.constant(mat({1, 2}, {3, 4}));
  const Tensor& vn = tape.value(tape.rms_norm(v, w2, 0.0f));
  CHECK(rel_err(vn.at(0), 0.848528) < 1e-5);
  CHECK(rel_err(vn.at(1), 1.131371) < 1e-5);

  CHECK_THROWS_AS(tape.rms_norm(v, w, 0.0f), nres::DimensionError);
}

TEST_CASE("softmax_cross_entropy: uniform, saturated, hand oracle, errors") {
  Tape tape;
  Value uniform = tape.constant(Tensor::zeros({2, 4}));
  double lnl = tape.value(tape.softmax_cross_entropy(uniform, {1, 3})).at(0);
  CHECK(rel_err(lnl, std::log(4.0)) < 1e-6);

  Tensor hot = Tensor::zeros({1, 4});
  hot.at(0, 2) = 1000.0f;
  Value sat = tape.constant(hot);
  CHECK(tape.value(tape.softmax_cross_entropy(sat, {2})).at(0) < 1e-4);

  Value logits = tape.constant(mat({1, 3}, {1, 2, 3}));
  // -log softmax([1,2,3])[2] = 0.407606.
  CHECK(rel_err(tape.value(tape.softmax_cross_entropy(logits, {2})).at(0), 0.407606) < 1e-5);

  CHECK_THROWS_AS(tape.softmax_cross_entropy(logits, {3}), nres::IndexError);
  CHECK_THROWS_AS(tape.softmax_cross_entropy(logits, {-1}), nres::IndexError);
  CHECK_THROWS_AS(tape.softmax_cross_entropy(logits, {0, 1}), nres::DimensionError);
}

TEST_CASE("softmax_cross_entropy is invariant to constant logit shifts") {
  std::vector<float> base = {0.3f, -1.2f, 2.0f, 0.7f, -0.5f, 1.1f};
  Tape t1, t2;
  std::vector<float> shifted = base;
  for (float& v : shifted) v += 123.25f;
  double a = t1.value(t1.softmax_cross_entropy(t1.constant(mat({2, 3}, base)), {2, 0})).at(0);
  double b = t2.value(t2.softmax_cross_entropy(t2.constant(mat({2, 3}, shifted)), {2, 0})).at(0);
  CHECK(std::fabs(a - b) < 1e-5);
}

TEST_CASE("embedding gathers rows and scatter-adds gradients") {
  Tape tape;
  Value table = tape.leaf(mat({3, 2}, {0, 1, 10, 11, 20, 21}));
  Value rows = tape.embedding(table, {2, 0, 2});
  const Tensor& r = tape.value(rows);
  CHECK(r.at(0, 0) == 20.0f);
  CHECK(r.at(1, 1) == 1.0f);
  CHECK(r.at(2, 0) == 20.0f);

  // Sum all outputs; repeated id 2 must accumulate gradient 2.
  Value ones = tape.constant(Tensor::full({2, 1}, 1.0f));
  Value total = tape.matmul(tape.matmul(tape.constant(Tensor::full({1, 3}, 1.0f)), rows), ones);
  tape.backward(total);
  const Tensor& g = tape.grad(table);
  CHECK(g.at(0, 0) == 1.0f);
  CHECK(g.at(1, 0) == 0.0f);
  CHECK(g.at(2, 0) == 2.0f);

  CHECK_THROWS_AS(tape.embedding(table, {3}), nres::IndexError);
}

TEST_CASE("row_scale multiplies each row by its scalar") {
  Tape tape;
  Value x = tape.leaf(mat({2, 3}, {1, 2, 3, 4, 5, 6}));
  Value s = tape.leaf(mat({2, 1}, {2, -1}));
  Value y = tape.row_scale(x, s);
  const Tensor& v = tape.value(y);
  CHECK(v.at(0, 2) == 6.0f);
  CHECK(v.at(1, 0) == -4.0f);

  // d(sum y)/dx = s per row; d(sum y)/ds = row sums of x.
  Value total = tape.matmul(tape.matmul(tape.constant(Tensor::full({1, 2}, 1.0f)), y),
                            tape.constant(Tensor::full({3, 1}, 1.0f)));
  tape.backward(total);
  CHECK(tape.grad(x).at(0, 0) == 2.0f);
  CHECK(tape.grad(x).at(1, 2) == -1.0f);
  CHECK(tape.grad(s).at(0) == 6.0f);
  CHECK(tape.grad(s).at(1) == 15.0f);

  Tape t2;
  Value bad = t2.leaf(mat({3, 1}, {1, 2, 3}));
  CHECK_THROWS_AS(t2.row_scale(t2.leaf(mat({2, 3}, {1, 2, 3, 4, 5, 6})), bad),
                  nres::DimensionError);
}

TEST_CASE("l1_masked_sum: masked rows only; subgradient at 0 is 0") {
  Tape tape;
  Value x = tape.leaf(mat({2, 3}, {1, -2, 3, 100, 100, 100}));
  Value s = tape.l1_masked_sum(x, {1, 0});
  CHECK(tape.value(s).at(0) == 6.0f);
  tape.backward(s);
  const Tensor& g = tape.grad(x);
  CHECK(g.at(0, 0) == 1.0f);
  CHECK(g.at(0, 1) == -1.0f);
  CHECK(g.at(0, 2) == 1.0f);
  CHECK(g.at(1, 0) == 0.0f);  // unmasked row contributes nothing

  Tape t2;
  Value z = t2.leaf(Tensor::zeros({1, 3}));
  Value sz = t2.l1_masked_sum(z, {1});
  CHECK(t2.value(sz).at(0) == 0.0f);
  t2.backward(sz);
  for (int64_t i = 0; i < 3; ++i) CHECK(t2.grad(z).at(i) == 0.0f);

  Tape t3;
  CHECK_THROWS_AS(t3.l1_masked_sum(t3.leaf(Tensor::zeros({2, 3})), {1}), nres::DimensionError);
}

TEST_CASE("binary_ce_sum: ln 2 at maximal uncertainty, hand oracle, clamping") {
  Tape tape;
  Value p = tape.leaf(mat({2, 1}, {0.5f, 0.5f}));
  Value s = tape.binary_ce_sum(p, {0.0f, 1.0f});
  CHECK(rel_err(tape.value(s).at(0), 2.0 * std::log(2.0)) < 1e-5);

  Tape t2;
  // Single term, target 1, p = 0.8: -ln 0.8 = 0.223144.
  Value p2 = t2.leaf(mat({1, 1}, {0.8f}));
  Value s2 = t2.binary_ce_sum(p2, {1.0f});
  CHECK(rel_err(t2.value(s2).at(0), 0.223144) < 1e-5);
  t2.backward(s2);
  // d(-ln p)/dp = -1/p = -1.25.
  CHECK(rel_err(t2.grad(p2).at(0), -1.25) < 1e-4);

  // Perfect classification scores ~0 and is flat where the clamp engages.
  Tape t3;
  Value p3 = t3.leaf(mat({2, 1}, {0.0f, 1.0f}));
  Value s3 = t3.binary_ce_sum(p3, {0.0f, 1.0f});
  CHECK(t3.value(s3).at(0) < 1e-5);
  t3.backward(s3);
  CHECK(t3.grad(p3).at(0) == 0.0f);
  CHECK(t3.grad(p3).at(1) == 0.0f);

  Tape t4;
  CHECK_THROWS_AS(t4.binary_ce_sum(t4.leaf(Tensor::zeros({2, 1})), {1.0f}),
                  nres::DimensionError);
}

TEST_CASE("causal_attention: single token reduces to v") {
  Tape tape;
  Value q = tape.constant(mat({1, 4}, {0.3f, -1.0f, 2.0f, 0.1f}));
  Value k = tape.constant(mat({1, 4}, {1.0f, 1.0f, 1.0f, 1.0f}));
  Value v = tape.constant(mat({1, 4}, {5.0f, 6.0f, 7.0f, 8.0f}));
  const Tensor& out = tape.value(tape.causal_attention(q, k, v, 1, 2));
  for (int64_t i = 0; i < 4; ++i) CHECK(out.at(i) == tape.value(v).at(i));
}

TEST_CASE("causal_attention: output rows ignore later positions") {
  std::vector<float> qd(12), kd(12), vd(12);
  nres::Rng rng(5);
  for (auto* vec : {&qd, &kd, &vd}) {
    for (float& f : *vec) f = static_cast<float>(rng.normal());
  }
  auto run = [&](float last_q) {
    Tape tape;
    std::vector<float> q2 = qd, k2 = kd, v2 = vd;
    q2[8] = last_q;
    k2[8] = last_q;
    v2[8] = last_q;
    Value out = tape.causal_attention(tape.constant(mat({3, 4}, q2)), tape.constant(mat({3, 4}, k2)),
                                      tape.constant(mat({3, 4}, v2)), 1, 2);
    return tape.value(out);
  };
  Tensor a = run(0.0f), b = run(100.0f);
  for (int64_t i = 0; i < 8; ++i) CHECK(a.at(i) == b.at(i));  // rows 0 and 1 bitwise equal
  CHECK(a.at(2, 0) != b.at(2, 0));

  Tape t;
  Value x = t.constant(Tensor::zeros({4, 4}));
  CHECK_THROWS_AS(t.causal_attention(x, x, x, 3, 2), nres::DimensionError);
  CHECK_THROWS_AS(t.causal_attention(x, x, x, 1, 3), nres::DimensionError);
}

TEST_CASE("backward: constant root is a no-op; linear case gives grad = x") {
  Tape tape;
  Value w = tape.leaf(mat({1, 3}, {1, 1, 1}));
  Value c = tape.constant(Tensor::scalar(5.0f));
  tape.backward(c);
  const Tensor& gw = tape.grad(w);
  for (int64_t i = 0; i < 3; ++i) CHECK(gw.at(i) == 0.0f);

  Tape t2;
  Value w2 = t2.leaf(mat({1, 3}, {2, -1, 4}));
  Value x2 = t2.constant(mat({3, 1}, {5, 6, 7}));
  Value y = t2.matmul(w2, x2);
  t2.backward(y);
  const Tensor& g = t2.grad(w2);
  CHECK(g.at(0) == 5.0f);
  CHECK(g.at(1) == 6.0f);
  CHECK(g.at(2) == 7.0f);
}

TEST_CASE("backward: contract violations") {
  Tape tape;
  Value x = tape.leaf(mat({2, 2}, {1, 2, 3, 4}));
  CHECK_THROWS_AS(tape.backward(x), nres::ContractError);

  Tape t2;
  Value y = t2.scale(t2.leaf(Tensor::scalar(1.0f)), 2.0f);
  t2.backward(y);
  CHECK_THROWS_AS(t2.backward(y), nres::ContractError);
  // Recording after differentiation is also rejected.
  CHECK_THROWS_AS(t2.scale(y, 1.0f), nres::ContractError);
}

TEST_CASE("gradients accumulate when a node is reused") {
  Tape tape;
  Value x = tape.leaf(Tensor::scalar(3.0f));
  Value y = tape.add(x, x);  // y = 2x
  tape.backward(y);
  CHECK(tape.grad(x).at(0) == 2.0f);
}

TEST_CASE("activation gradients match closed-form slopes") {
  auto check_slope = [](Activation kind, double x, double expected) {
    Tape tape;
    Value v = tape.leaf(Tensor::scalar(static_cast<float>(x)));
    tape.backward(tape.activation(kind, v));
    CHECK(rel_err(tape.grad(v).at(0), expected) < 1e-4);
  };
  auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  double x = 0.8;
  check_slope(Activation::kSilu, x, sig(x) * (1.0 + x * (1.0 - sig(x))));
  check_slope(Activation::kSigmoid, x, sig(x) * (1.0 - sig(x)));
  check_slope(Activation::kRelu, 1.5, 1.0);
  check_slope(Activation::kRelu, -1.5, 0.0);
  const double scale = std::sqrt(2.0 / 3.14159265358979323846);
  double inner = scale * (x + 0.044715 * x * x * x);
  double t = std::tanh(inner);
  double gelu_slope =
      0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * scale * (1.0 + 3.0 * 0.044715 * x * x);
  check_slope(Activation::kGelu, x, gelu_slope);
}

TEST_CASE("forward results are bitwise deterministic") {
  auto run = [] {
    Tape tape;
    nres::Rng rng(9);
    std::vector<float> a(64), b(64);
    for (float& f : a) f = static_cast<float>(rng.normal());
    for (float& f : b) f = static_cast<float>(rng.normal());
    Value x = tape.constant(mat({8, 8}, a));
    Value y = tape.constant(mat({8, 8}, b));
    Value z = tape.rms_norm(tape.matmul(x, y), tape.constant(Tensor::full({8}, 1.0f)), 1e-5f);
    return tape.value(tape.activation(Activation::kSilu, z));
  };
  Tensor first = run(), second = run();
  for (int64_t i = 0; i < first.numel(); ++i) CHECK(first.at(i) == second.at(i));
}

}  // TEST_SUITE
