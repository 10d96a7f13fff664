#include "nres/tape.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <utility>

#include "nres/errors.hpp"

namespace nres {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using MutStridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;

ConstMap as_matrix(const Tensor& t) { return ConstMap(t.data(), t.rows(), t.cols()); }
MutMap as_matrix(Tensor& t) { return MutMap(t.data(), t.rows(), t.cols()); }

float stable_sigmoid(float x) {
  if (x >= 0.0f) {
    return 1.0f / (1.0f + std::exp(-x));
  }
  float e = std::exp(x);
  return e / (1.0f + e);
}

// GELU uses the tanh approximation:
//   gelu(x) = 0.5 * x * (1 + tanh(sqrt(2/pi) * (x + 0.044715 * x^3)))
constexpr float kGeluCoeff = 0.044715f;
const float kGeluScale = std::sqrt(2.0f / std::numbers::pi_v<float>);

float activation_value(Activation kind, float x) {
  switch (kind) {
    case Activation::kSilu:
      return x * stable_sigmoid(x);
    case Activation::kGelu: {
      float inner = kGeluScale * (x + kGeluCoeff * x * x * x);
      return 0.5f * x * (1.0f + std::tanh(inner));
    }
    case Activation::kRelu:
      return x > 0.0f ? x : 0.0f;
    case Activation::kSigmoid:
      return stable_sigmoid(x);
  }
  throw ConfigError("unknown activation kind");
}

float activation_slope(Activation kind, float x) {
  switch (kind) {
    case Activation::kSilu: {
      float s = stable_sigmoid(x);
      return s * (1.0f + x * (1.0f - s));
    }
    case Activation::kGelu: {
      float inner = kGeluScale * (x + kGeluCoeff * x * x * x);
      float t = std::tanh(inner);
      float sech2 = 1.0f - t * t;
      return 0.5f * (1.0f + t) + 0.5f * x * sech2 * kGeluScale * (1.0f + 3.0f * kGeluCoeff * x * x);
    }
    case Activation::kRelu:
      return x > 0.0f ? 1.0f : 0.0f;
    case Activation::kSigmoid: {
      float s = stable_sigmoid(x);
      return s * (1.0f - s);
    }
  }
  throw ConfigError("unknown activation kind");
}

}  // namespace

Activation activation_from_string(const std::string& name) {
  if (name == "silu") return Activation::kSilu;
  if (name == "gelu") return Activation::kGelu;
  if (name == "relu") return Activation::kRelu;
  if (name == "sigmoid") return Activation::kSigmoid;
  throw ConfigError("unknown activation '" + name + "' (expected silu|gelu|relu|sigmoid)");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::kSilu: return "silu";
    case Activation::kGelu: return "gelu";
    case Activation::kRelu: return "relu";
    case Activation::kSigmoid: return "sigmoid";
  }
  return "?";
}

int32_t Tape::push(Tensor value, bool requires_grad) {
  if (backward_done_) {
    throw ContractError("tape: cannot record operations after backward()");
  }
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return static_cast<int32_t>(nodes_.size() - 1);
}

Tape::Node& Tape::node_at(Value v) {
  if (!v.valid() || v.id >= static_cast<int32_t>(nodes_.size())) {
    throw ContractError("tape: invalid value handle");
  }
  return nodes_[static_cast<size_t>(v.id)];
}

const Tape::Node& Tape::node_at(Value v) const {
  return const_cast<Tape*>(this)->node_at(v);
}

Tensor& Tape::grad_buffer(Value v) {
  Node& n = node_at(v);
  if (!n.grad_allocated) {
    n.grad = Tensor::zeros(n.value.shape());
    n.grad_allocated = true;
  }
  return n.grad;
}

const Tensor& Tape::grad_view(Value v) const { return node_at(v).grad; }

const Tensor& Tape::value(Value v) const { return node_at(v).value; }

const Tensor& Tape::grad(Value v) { return grad_buffer(v); }

bool Tape::requires_grad(Value v) const { return node_at(v).requires_grad; }

Value Tape::leaf(Tensor value, bool requires_grad) {
  return Value{push(std::move(value), requires_grad)};
}

Value Tape::matmul(Value av, Value bv) {
  const Tensor& a = value(av);
  const Tensor& b = value(bv);
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + a.shape_str() + " and " + b.shape_str());
  }
  Tensor out({a.dim(0), b.dim(1)});
  as_matrix(out).noalias() = as_matrix(a) * as_matrix(b);
  bool rg = requires_grad(av) || requires_grad(bv);
  Value outv{push(std::move(out), rg)};
  if (rg) {
    node_at(outv).backprop = [out_id = outv, av, bv](Tape& t) {
      const Tensor& g = t.grad_view(out_id);
      if (t.requires_grad(av)) {
        as_matrix(t.grad_buffer(av)).noalias() += as_matrix(g) * as_matrix(t.value(bv)).transpose();
      }
      if (t.requires_grad(bv)) {
        as_matrix(t.grad_buffer(bv)).noalias() += as_matrix(t.value(av)).transpose() * as_matrix(g);
      }
    };
  }
  return outv;
}

Value Tape::add(Value av, Value bv) {
  const Tensor& a = value(av);
  const Tensor& b = value(bv);
  bool scalar_b = b.numel() == 1;
  if (!scalar_b && !a.same_shape(b)) {
    throw DimensionError("add: incompatible shapes " + a.shape_str() + " and " + b.shape_str());
  }
  Tensor out(a.shape());
  const float* ap = a.data();
  float* op = out.data();
  if (scalar_b) {
    float c = b.data()[0];
    for (int64_t i = 0; i < a.numel(); ++i) op[i] = ap[i] + c;
  } else {
    const float* bp = b.data();
    for (int64_t i = 0; i < a.numel(); ++i) op[i] = ap[i] + bp[i];
  }
  bool rg = requires_grad(av) || requires_grad(bv);
  Value outv{push(std::move(out), rg)};
  if (rg) {
    node_at(outv).backprop = [out_id = outv, av, bv, scalar_b](Tape& t) {
      const Tensor& g = t.grad_view(out_id);
      if (t.requires_grad(av)) {
        Tensor& da = t.grad_buffer(av);
        for (int64_t i = 0; i < g.numel(); ++i) da.data()[i] += g.data()[i];
      }
      if (t.requires_grad(bv)) {
        Tensor& db = t.grad_buffer(bv);
        if (scalar_b) {
          double acc = 0.0;
          for (int64_t i = 0; i < g.numel(); ++i) acc += g.data()[i];
          db.data()[0] += static_cast<float>(acc);
        } else {
          for (int64_t i = 0; i < g.numel(); ++i) db.data()[i] += g.data()[i];
        }
      }
    };
  }
  return outv;
}

Value Tape::mul(Value av, Value bv) {
  const Tensor& a = value(av);
  const Tensor& b = value(bv);
  bool scalar_b = b.numel() == 1;
  if (!scalar_b && !a.same_shape(b)) {
    throw DimensionError("mul: incompatible shapes " + a.shape_str() + " and " + b.shape_str());
  }
  Tensor out(a.shape());
  const float* ap = a.data();
  float* op = out.data();
  if (scalar_b) {
    float c = b.data()[0];
    for (int64_t i = 0; i < a.numel(); ++i) op[i] = ap[i] * c;
  } else {
    const float* bp = b.data();
    for (int64_t i = 0; i < a.numel(); ++i) op[i] = ap[i] * bp[i];
  }
  bool rg = requires_grad(av) || requires_grad(bv);
  Value outv{push(std::move(out), rg)};
  if (rg) {
    node_at(outv).backprop = [out_id = outv, av, bv, scalar_b](Tape& t) {
      const Tensor& g = t.grad_view(out_id);
      const Tensor& a = t.value(av);
      const Tensor& b = t.value(bv);
      if (t.requires_grad(av)) {
        Tensor& da = t.grad_buffer(av);
        if (scalar_b) {
          float c = b.data()[0];
          for (int64_t i = 0; i < g.numel(); ++i) da.data()[i] += g.data()[i] * c;
        } else {
          for (int64_t i = 0; i < g.numel(); ++i) da.data()[i] += g.data()[i] * b.data()[i];
        }
      }
      if (t.requires_grad(bv)) {
        Tensor& db = t.grad_buffer(bv);
        if (scalar_b) {
          double acc = 0.0;
          for (int64_t i = 0; i < g.numel(); ++i) acc += static_cast<double>(g.data()[i]) * a.data()[i];
          db.data()[0] += static_cast<float>(acc);
        } else {
          for (int64_t i = 0; i < g.numel(); ++i) db.data()[i] += g.data()[i] * a.data()[i];
        }
      }
    };
  }
  return outv;
}

Value Tape::scale(Value av, float s) {
  const Tensor& a = value(av);
  Tensor out(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] * s;
  bool rg = requires_grad(av);
  Value outv{push(std::move(out), rg)};
  if (rg) {
    node_at(outv).backprop = [out_id = outv, av, s](Tape& t) {
      const Tensor& g = t.grad_view(out_id);
      Tensor& da = t.grad_buffer(av);
      for (int64_t i = 0; i < g.numel(); ++i) da.data()[i] += g.data()[i] * s;
    };
  }
  return outv;
}

Value Tape::activation(Activation kind, Value xv) {
  const Tensor& x = value(xv);
  Tensor out(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) out.data()[i] = activation_value(kind, x.data()[i]);
  bool rg = requires_grad(xv);
  Value outv{push(std::move(out), rg)};
  if (rg) {
    node_at(outv).backprop = [out_id = outv, xv, kind](Tape& t) {
      const Tensor& g = t.grad_view(out_id);
      const Tensor& x = t.value(xv);
      Tensor& dx = t.grad_buffer(xv);
      for (int64_t i = 0; i < g.numel(); ++i) {
        dx.data()[i] += g.data()[i] * activation_slope(kind, x.data()[i]);
      }
    };
  }
  return outv;
}

Value Tape::rms_norm(Value xv, Value wv, float eps) {
  const Tensor& x = value(xv);
  const Tensor& w = value(wv);
  if (x.ndim() < 1 || w.numel() != x.cols()) {
    throw DimensionError("rms_norm: weight shape " + w.shape_str() +
                         " does not match trailing axis of " + x.shape_str());
  }
  if (eps < 0.0f) {
    throw ConfigError("rms_norm: eps must be non-negative");
  }
  int64_t rows = x.rows();
  int64_t d = x.cols();
  Tensor out(x.shape());
  // Inverse RMS per row, kept in f64 for the backward pass.
  std::vector<double> rinv(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const float* xp = x.data() + r * d;
    double ms = 0.0;
    for (int64_t j = 0; j < d; ++j) ms += static_cast<double>(xp[j]) * xp[j];
    ms = ms / static_cast<double>(d) + eps;
    double inv = ms > 0.0 ? 1.0 / std::sqrt(ms) : 0.0;
    rinv[static_cast<size_t>(r)] = inv;
    float* op = out.data() + r * d;
    for (int64_t j = 0; j < d; ++j) {
      op[j] = static_cast<float>(xp[j] * inv) * w.data()[j];
    }
  }
  bool rg = requires_grad(xv) || requires_grad(wv);
  Value outv{push(std::move(out), rg)};
  if (rg) {
    node_at(outv).backprop = [out_id = outv, xv, wv, d, rows, rinv = std::move(rinv)](Tape& t) {
      const Tensor& g = t.grad_view(out_id);
      const Tensor& x = t.value(xv);
      const Tensor& w = t.value(wv);
      bool need_dx = t.requires_grad(xv);
      bool need_dw = t.requires_grad(wv);
      std::vector<double> dw_acc;
      if (need_dw) dw_acc.assign(static_cast<size_t>(d), 0.0);
      for (int64_t r = 0; r < rows; ++r) {
        const float* xp = x.data() + r * d;
        const float* gp = g.data() + r * d;
        double inv = rinv[static_cast<size_t>(r)];
        if (need_dx) {
          double s = 0.0;
          for (int64_t j = 0; j < d; ++j) {
            s += static_cast<double>(gp[j]) * w.data()[j] * xp[j];
          }
          double inv3_s_over_d = inv * inv * inv * s / static_cast<double>(d);
          float* dxp = t.grad_buffer(xv).data() + r * d;
          for (int64_t j = 0; j < d; ++j) {
            dxp[j] += static_cast<float>(inv * gp[j] * w.data()[j] - inv3_s_over_d * xp[j]);
          }
        }
        if (need_dw) {
          for (int64_t j = 0; j < d; ++j) {
            dw_acc[static_cast<size_t>(j)] += static_cast<double>(gp[j]) * xp[j] * inv;
          }
        }
      }
      if (need_dw) {
        Tensor& dw = t.grad_buffer(wv);
        for (int64_t j = 0; j < d; ++j) dw.data()[j] += static_cast<float>(dw_acc[static_cast<size_t>(j)]);
      }
    };
  }
  return outv;
}

Value Tape::row_scale(Value xv, Value sv) {
  const Tensor& x = value(xv);
  const Tensor& s = value(sv);
  if (x.ndim() != 2 || s.numel() != x.rows()) {
    throw DimensionError("row_scale: scale shape " + s.shape_str() +
                         " does not match rows of " + x.shape_str());
  }
  int64_t rows = x.rows();
  int64_t d = x.cols();
  Tensor out(x.shape());
  for (int64_t r = 0; r < rows; ++r) {
    float c = s.data()[r];
    const float* xp = x.data() + r * d;
    float* op = out.data() + r * d;
    for (int64_t j = 0; j < d; ++j) op[j] = xp[j] * c;
  }
  bool rg = requires_grad(xv) || requires_grad(sv);
  Value outv{push(std::move(out), rg)};
  if (rg) {
    node_at(outv).backprop = [out_id = outv, xv, sv, rows, d](Tape& t) {
      const Tensor& g = t.grad_view(out_id);
      const Tensor& x = t.value(xv);
      const Tensor& s = t.value(sv);
      if (t.requires_grad(xv)) {
        Tensor& dx = t.grad_buffer(xv);
        for (int64_t r = 0; r < rows; ++r) {
          float c = s.data()[r];
          const float* gp = g.data() + r * d;
          float* dxp = dx.data() + r * d;
          for (int64_t j = 0; j < d; ++j) dxp[j] += gp[j] * c;
        }
      }
      if (t.requires_grad(sv)) {
        Tensor& ds = t.grad_buffer(sv);
        for (int64_t r = 0; r < rows; ++r) {
          const float* gp = g.data() + r * d;
          const float* xp = x.data() + r * d;
          double acc = 0.0;
          for (int64_t j = 0; j < d; ++j) acc += static_cast<double>(gp[j]) * xp[j];
          ds.data()[r] += static_cast<float>(acc);
        }
      }
    };
  }
  return outv;
}

Value Tape::embedding(Value tablev, std::vector<int32_t> ids) {
  const Tensor& table = value(tablev);
  if (table.ndim() != 2) {
    throw DimensionError("embedding: table must be rank 2, got " + table.shape_str());
  }
  int64_t vocab = table.dim(0);
  int64_t d = table.dim(1);
  int64_t n = static_cast<int64_t>(ids.size());
  if (n == 0) {
    throw ContractError("embedding: empty id list");
  }
  for (int64_t i = 0; i < n; ++i) {
    if (ids[static_cast<size_t>(i)] < 0 || ids[static_cast<size_t>(i)] >= vocab) {
      throw IndexError("embedding: id " + std::to_string(ids[static_cast<size_t>(i)]) +
                       " out of range [0, " + std::to_string(vocab) + ")");
    }
  }
  Tensor out({n, d});
  for (int64_t i = 0; i < n; ++i) {
    const float* src = table.data() + static_cast<int64_t>(ids[static_cast<size_t>(i)]) * d;
    std::copy(src, src + d, out.data() + i * d);
  }
  bool rg = requires_grad(tablev);
  Value outv{push(std::move(out), rg)};
  if (rg) {
    node_at(outv).backprop = [out_id = outv, tablev, d, n, ids = std::move(ids)](Tape& t) {
      const Tensor& g = t.grad_view(out_id);
      Tensor& dt = t.grad_buffer(tablev);
      for (int64_t i = 0; i < n; ++i) {
        float* dst = dt.data() + static_cast<int64_t>(ids[static_cast<size_t>(i)]) * d;
        const float* src = g.data() + i * d;
        for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    };
  }
  return outv;
}

Value Tape::causal_attention(Value qv, Value kv, Value vv, int64_t batch, int64_t n_heads) {
  const Tensor& q = value(qv);
  const Tensor& k = value(kv);
  const Tensor& v = value(vv);
  if (q.ndim() != 2 || !q.same_shape(k) || !q.same_shape(v)) {
    throw DimensionError("causal_attention: q/k/v shapes must match, got " + q.shape_str() +
                         ", " + k.shape_str() + ", " + v.shape_str());
  }
  int64_t n = q.dim(0);
  int64_t d = q.dim(1);
  if (batch <= 0 || n % batch != 0) {
    throw DimensionError("causal_attention: rows " + std::to_string(n) +
                         " not divisible by batch " + std::to_string(batch));
  }
  if (n_heads <= 0 || d % n_heads != 0) {
    throw DimensionError("causal_attention: width " + std::to_string(d) +
                         " not divisible by heads " + std::to_string(n_heads));
  }
  int64_t seq = n / batch;
  int64_t hd = d / n_heads;
  float att_scale = 1.0f / std::sqrt(static_cast<float>(hd));

  Tensor out({n, d});
  // Cached softmax probabilities, [batch × heads × seq × seq], causal rows.
  std::vector<float> probs(static_cast<size_t>(batch * n_heads * seq * seq), 0.0f);

  RowMat scores(seq, seq);
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t h = 0; h < n_heads; ++h) {
      const float* base_q = q.data() + b * seq * d + h * hd;
      const float* base_k = k.data() + b * seq * d + h * hd;
      const float* base_v = v.data() + b * seq * d + h * hd;
      ConstStridedMap Q(base_q, seq, hd, Eigen::OuterStride<>(d));
      ConstStridedMap K(base_k, seq, hd, Eigen::OuterStride<>(d));
      ConstStridedMap V(base_v, seq, hd, Eigen::OuterStride<>(d));
      scores.noalias() = Q * K.transpose();
      float* pbase = probs.data() + ((b * n_heads + h) * seq * seq);
      for (int64_t i = 0; i < seq; ++i) {
        // Causal row: keys 0..i only.
        float row_max = -std::numeric_limits<float>::infinity();
        for (int64_t j = 0; j <= i; ++j) {
          float s = scores(i, j) * att_scale;
          scores(i, j) = s;
          row_max = std::max(row_max, s);
        }
        double denom = 0.0;
        float* prow = pbase + i * seq;
        for (int64_t j = 0; j <= i; ++j) {
          float e = std::exp(scores(i, j) - row_max);
          prow[j] = e;
          denom += e;
        }
        float inv = static_cast<float>(1.0 / denom);
        for (int64_t j = 0; j <= i; ++j) prow[j] *= inv;
      }
      ConstMap P(pbase, seq, seq);
      MutStridedMap O(out.data() + b * seq * d + h * hd, seq, hd, Eigen::OuterStride<>(d));
      O.noalias() = P * V;
    }
  }

  bool rg = requires_grad(qv) || requires_grad(kv) || requires_grad(vv);
  Value outv{push(std::move(out), rg)};
  if (rg) {
    node_at(outv).backprop = [out_id = outv, qv, kv, vv, batch, n_heads, seq, hd, d,
                              att_scale, probs = std::move(probs)](Tape& t) {
      const Tensor& g = t.grad_view(out_id);
      const Tensor& q = t.value(qv);
      const Tensor& k = t.value(kv);
      const Tensor& v = t.value(vv);
      bool need_dq = t.requires_grad(qv);
      bool need_dk = t.requires_grad(kv);
      bool need_dv = t.requires_grad(vv);
      RowMat dS(seq, seq);
      RowMat dP(seq, seq);
      for (int64_t b = 0; b < batch; ++b) {
        for (int64_t h = 0; h < n_heads; ++h) {
          int64_t off = b * seq * d + h * hd;
          ConstStridedMap G(g.data() + off, seq, hd, Eigen::OuterStride<>(d));
          ConstStridedMap Q(q.data() + off, seq, hd, Eigen::OuterStride<>(d));
          ConstStridedMap K(k.data() + off, seq, hd, Eigen::OuterStride<>(d));
          ConstStridedMap V(v.data() + off, seq, hd, Eigen::OuterStride<>(d));
          const float* pbase = probs.data() + ((b * n_heads + h) * seq * seq);
          ConstMap P(pbase, seq, seq);
          if (need_dv) {
            MutStridedMap dV(t.grad_buffer(vv).data() + off, seq, hd, Eigen::OuterStride<>(d));
            dV.noalias() += P.transpose() * G;
          }
          if (need_dq || need_dk) {
            dP.noalias() = G * V.transpose();
            for (int64_t i = 0; i < seq; ++i) {
              const float* prow = pbase + i * seq;
              double dot = 0.0;
              for (int64_t j = 0; j <= i; ++j) dot += static_cast<double>(prow[j]) * dP(i, j);
              for (int64_t j = 0; j <= i; ++j) {
                dS(i, j) = prow[j] * static_cast<float>(dP(i, j) - dot);
              }
              for (int64_t j = i + 1; j < seq; ++j) dS(i, j) = 0.0f;
            }
            if (need_dq) {
              MutStridedMap dQ(t.grad_buffer(qv).data() + off, seq, hd, Eigen::OuterStride<>(d));
              dQ.noalias() += dS * K * att_scale;
            }
            if (need_dk) {
              MutStridedMap dK(t.grad_buffer(kv).data() + off, seq, hd, Eigen::OuterStride<>(d));
              dK.noalias() += dS.transpose() * Q * att_scale;
            }
          }
        }
      }
    };
  }
  return outv;
}

Value Tape::softmax_cross_entropy(Value logitsv, std::vector<int32_t> targets) {
  const Tensor& logits = value(logitsv);
  if (logits.ndim() != 2) {
    throw DimensionError("softmax_cross_entropy: logits must be rank 2, got " + logits.shape_str());
  }
  int64_t n = logits.dim(0);
  int64_t vocab = logits.dim(1);
  if (static_cast<int64_t>(targets.size()) != n) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(n) + " rows");
  }
  for (int64_t i = 0; i < n; ++i) {
    if (targets[static_cast<size_t>(i)] < 0 || targets[static_cast<size_t>(i)] >= vocab) {
      throw IndexError("softmax_cross_entropy: target " +
                       std::to_string(targets[static_cast<size_t>(i)]) + " out of range [0, " +
                       std::to_string(vocab) + ")");
    }
  }
  Tensor probs({n, vocab});
  double total = 0.0;
  for (int64_t r = 0; r < n; ++r) {
    const float* lp = logits.data() + r * vocab;
    float row_max = lp[0];
    for (int64_t j = 1; j < vocab; ++j) row_max = std::max(row_max, lp[j]);
    double denom = 0.0;
    float* pp = probs.data() + r * vocab;
    for (int64_t j = 0; j < vocab; ++j) {
      float e = std::exp(lp[j] - row_max);
      pp[j] = e;
      denom += e;
    }
    float inv = static_cast<float>(1.0 / denom);
    for (int64_t j = 0; j < vocab; ++j) pp[j] *= inv;
    double lse = static_cast<double>(row_max) + std::log(denom);
    total += lse - static_cast<double>(lp[targets[static_cast<size_t>(r)]]);
  }
  Tensor out = Tensor::scalar(static_cast<float>(total / static_cast<double>(n)));
  bool rg = requires_grad(logitsv);
  Value outv{push(std::move(out), rg)};
  if (rg) {
    node_at(outv).backprop = [out_id = outv, logitsv, n, vocab, targets = std::move(targets),
                              probs = std::move(probs)](Tape& t) {
      float gscale = t.grad_view(out_id).data()[0] / static_cast<float>(n);
      Tensor& dl = t.grad_buffer(logitsv);
      for (int64_t r = 0; r < n; ++r) {
        const float* pp = probs.data() + r * vocab;
        float* dp = dl.data() + r * vocab;
        for (int64_t j = 0; j < vocab; ++j) dp[j] += gscale * pp[j];
        dp[targets[static_cast<size_t>(r)]] -= gscale;
      }
    };
  }
  return outv;
}

Value Tape::l1_masked_sum(Value xv, std::vector<uint8_t> row_mask) {
  const Tensor& x = value(xv);
  int64_t rows = x.rows();
  int64_t d = x.cols();
  if (static_cast<int64_t>(row_mask.size()) != rows) {
    throw DimensionError("l1_masked_sum: mask length " + std::to_string(row_mask.size()) +
                         " does not match rows " + std::to_string(rows));
  }
  double total = 0.0;
  for (int64_t r = 0; r < rows; ++r) {
    if (!row_mask[static_cast<size_t>(r)]) continue;
    const float* xp = x.data() + r * d;
    for (int64_t j = 0; j < d; ++j) total += std::abs(static_cast<double>(xp[j]));
  }
  Tensor out = Tensor::scalar(static_cast<float>(total));
  bool rg = requires_grad(xv);
  Value outv{push(std::move(out), rg)};
  if (rg) {
    node_at(outv).backprop = [out_id = outv, xv, rows, d, mask = std::move(row_mask)](Tape& t) {
      float g = t.grad_view(out_id).data()[0];
      const Tensor& x = t.value(xv);
      Tensor& dx = t.grad_buffer(xv);
      for (int64_t r = 0; r < rows; ++r) {
        if (!mask[static_cast<size_t>(r)]) continue;
        const float* xp = x.data() + r * d;
        float* dp = dx.data() + r * d;
        for (int64_t j = 0; j < d; ++j) {
          // Subgradient of |x| at 0 is taken as 0.
          if (xp[j] > 0.0f) {
            dp[j] += g;
          } else if (xp[j] < 0.0f) {
            dp[j] -= g;
          }
        }
      }
    };
  }
  return outv;
}

Value Tape::binary_ce_sum(Value pv, std::vector<float> targets) {
  const Tensor& p = value(pv);
  int64_t n = p.numel();
  if (static_cast<int64_t>(targets.size()) != n) {
    throw DimensionError("binary_ce_sum: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(n) + " probabilities");
  }
  double total = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    float pc = std::min(std::max(p.data()[i], kBceEps), 1.0f - kBceEps);
    double tgt = targets[static_cast<size_t>(i)];
    total -= tgt * std::log(static_cast<double>(pc)) +
             (1.0 - tgt) * std::log(1.0 - static_cast<double>(pc));
  }
  Tensor out = Tensor::scalar(static_cast<float>(total));
  bool rg = requires_grad(pv);
  Value outv{push(std::move(out), rg)};
  if (rg) {
    node_at(outv).backprop = [out_id = outv, pv, n, targets = std::move(targets)](Tape& t) {
      float g = t.grad_view(out_id).data()[0];
      const Tensor& p = t.value(pv);
      Tensor& dp = t.grad_buffer(pv);
      for (int64_t i = 0; i < n; ++i) {
        float raw = p.data()[i];
        // Clamped region has zero slope.
        if (raw < kBceEps || raw > 1.0f - kBceEps) continue;
        float tgt = targets[static_cast<size_t>(i)];
        dp.data()[i] += g * (raw - tgt) / (raw * (1.0f - raw));
      }
    };
  }
  return outv;
}

void Tape::backward(Value root) {
  const Tensor& r = value(root);
  if (r.numel() != 1) {
    throw ContractError("backward: root must be scalar, got shape " + r.shape_str());
  }
  if (backward_done_) {
    throw ContractError("backward: tape already differentiated");
  }
  backward_done_ = true;
  if (!requires_grad(root)) {
    return;
  }
  grad_buffer(root).data()[0] = 1.0f;
  for (int32_t i = root.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.requires_grad && n.grad_allocated && n.backprop) {
      n.backprop(*this);
    }
  }
}

}  // namespace nres
