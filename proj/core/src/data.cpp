#include "nres/data.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>

#include "nres/errors.hpp"

namespace nres {

std::vector<int32_t> tokenize(const std::string& bytes) {
  std::vector<int32_t> ids;
  ids.reserve(bytes.size());
  for (unsigned char c : bytes) ids.push_back(static_cast<int32_t>(c));
  return ids;
}

std::string detokenize(const std::vector<int32_t>& ids) {
  std::string out;
  out.reserve(ids.size());
  for (int32_t id : ids) {
    if (id < 0 || id > 255) {
      throw IndexError("detokenize: token " + std::to_string(id) + " is not a byte");
    }
    out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
  }
  return out;
}

GeneratorKind generator_from_string(const std::string& name) {
  if (name == "markov2") return GeneratorKind::kMarkov2;
  if (name == "cipher") return GeneratorKind::kCipher;
  throw ConfigError("unknown generator '" + name + "' (expected markov2|cipher)");
}

std::string to_string(GeneratorKind k) {
  switch (k) {
    case GeneratorKind::kMarkov2: return "markov2";
    case GeneratorKind::kCipher: return "cipher";
  }
  return "?";
}

namespace {

constexpr int kAlphabet = 27;  // 'a'..'z' and space

// Independent RNG streams per purpose. Constants are arbitrary but frozen:
// regenerating a corpus must reproduce it bit-for-bit across releases.
constexpr uint64_t kTableSalt = 1;
constexpr uint64_t kStreamSalt = 2;
constexpr uint64_t kPermSalt = 3;

// Base logits get this gain so conditionals are peaked enough to be worth
// learning (entropy well below the ln 27 uniform ceiling).
constexpr double kLogitGain = 2.0;

int32_t symbol_to_byte(int s) { return s < 26 ? 'a' + s : ' '; }

// Row-major [state1 * kAlphabet + state0][next] transition probabilities.
// The table depends only on the seed; temperature rescales the shared
// logits, so two specs with the same seed describe perturbations of one
// underlying language.
std::vector<double> transition_table(uint64_t seed, double temperature) {
  Rng table_rng(Rng::mix(seed, kTableSalt));
  size_t states = static_cast<size_t>(kAlphabet) * kAlphabet;
  std::vector<double> probs(states * kAlphabet);
  for (size_t s = 0; s < states; ++s) {
    double* row = probs.data() + s * kAlphabet;
    double max_logit = -1e300;
    for (int n = 0; n < kAlphabet; ++n) {
      row[n] = kLogitGain * table_rng.normal() / temperature;
      max_logit = std::max(max_logit, row[n]);
    }
    double denom = 0.0;
    for (int n = 0; n < kAlphabet; ++n) {
      row[n] = std::exp(row[n] - max_logit);
      denom += row[n];
    }
    for (int n = 0; n < kAlphabet; ++n) row[n] /= denom;
  }
  return probs;
}

std::vector<int32_t> markov2_tokens(const SyntheticLanguageSpec& spec, int64_t n_tokens,
                                    uint64_t stream_salt) {
  std::vector<double> probs = transition_table(spec.seed, static_cast<double>(spec.temperature));
  // The sampling stream is keyed by the temperature too, so the proxy
  // corpus is an independent draw rather than a near-copy of the original.
  uint64_t tbits = std::bit_cast<uint64_t>(static_cast<double>(spec.temperature));
  Rng stream(Rng::mix(Rng::mix(spec.seed, tbits), stream_salt));

  std::vector<int32_t> tokens;
  tokens.reserve(static_cast<size_t>(n_tokens));
  int s0 = kAlphabet - 1, s1 = kAlphabet - 1;  // start from "space, space"
  for (int64_t i = 0; i < n_tokens; ++i) {
    const double* row = probs.data() + (static_cast<size_t>(s1) * kAlphabet + s0) * kAlphabet;
    double u = stream.uniform();
    double acc = 0.0;
    int next = kAlphabet - 1;
    for (int n = 0; n < kAlphabet; ++n) {
      acc += row[n];
      if (u < acc) {
        next = n;
        break;
      }
    }
    tokens.push_back(symbol_to_byte(next));
    s1 = s0;
    s0 = next;
  }
  return tokens;
}

// Pointwise byte permutation; identity when cipher_seed = 0. Permuting all
// 256 byte values relabels the 27-symbol alphabet onto mostly-unused byte
// ids, so the ciphered corpus is a statistically disjoint language (a new
// script) rather than a shuffle of the same one.
std::array<int32_t, 256> byte_permutation(uint64_t cipher_seed) {
  std::array<int32_t, 256> map{};
  for (int i = 0; i < 256; ++i) map[static_cast<size_t>(i)] = i;
  if (cipher_seed == 0) return map;
  Rng rng(Rng::mix(cipher_seed, kPermSalt));
  for (int i = 255; i > 0; --i) {
    int64_t j = rng.uniform_int(i + 1);
    std::swap(map[static_cast<size_t>(i)], map[static_cast<size_t>(j)]);
  }
  return map;
}

Corpus split_corpus(std::vector<int32_t> tokens, float heldout_fraction, Domain domain) {
  if (!(heldout_fraction >= 0.0f) || heldout_fraction >= 1.0f) {
    throw ConfigError("corpus: heldout_fraction must be in [0, 1)");
  }
  if (tokens.empty()) throw ConfigError("corpus: token stream is empty");
  size_t heldout = static_cast<size_t>(static_cast<double>(tokens.size()) *
                                       static_cast<double>(heldout_fraction));
  Corpus c;
  c.domain = domain;
  c.heldout_fraction = heldout_fraction;
  c.heldout.assign(tokens.end() - static_cast<ptrdiff_t>(heldout), tokens.end());
  tokens.resize(tokens.size() - heldout);
  c.train = std::move(tokens);
  if (c.train.empty()) throw ConfigError("corpus: train split is empty");
  return c;
}

}  // namespace

Corpus generate_corpus(const SyntheticLanguageSpec& spec, int64_t n_tokens,
                       float heldout_fraction, int64_t seq_len, Domain domain) {
  if (seq_len < 1) throw ConfigError("generate_corpus: seq_len must be positive");
  if (n_tokens < 10 * seq_len) {
    throw ConfigError("generate_corpus: n_tokens " + std::to_string(n_tokens) +
                      " is below the 10x seq_len floor (" + std::to_string(10 * seq_len) + ")");
  }
  if (!(spec.temperature > 0.0f)) {
    throw ConfigError("generate_corpus: temperature must be positive");
  }
  std::vector<int32_t> tokens;
  switch (spec.kind) {
    case GeneratorKind::kMarkov2:
      tokens = markov2_tokens(spec, n_tokens, kStreamSalt);
      break;
    case GeneratorKind::kCipher: {
      // Same base chain as markov2 with this seed/temperature, relabeled,
      // so an identity permutation reproduces the base corpus exactly.
      tokens = markov2_tokens(spec, n_tokens, kStreamSalt);
      std::array<int32_t, 256> map = byte_permutation(spec.cipher_seed);
      for (int32_t& t : tokens) t = map[static_cast<size_t>(t)];
      break;
    }
  }
  return split_corpus(std::move(tokens), heldout_fraction, domain);
}

Corpus load_corpus(const std::string& path, float heldout_fraction, Domain domain) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("load_corpus: cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.empty()) throw ConfigError("load_corpus: '" + path + "' is empty");
  return split_corpus(tokenize(bytes), heldout_fraction, domain);
}

MixedBatch sample_batch(const Corpus& original, const Corpus& next, float p, int64_t batch,
                        int64_t seq_len, Rng& rng) {
  if (!(p >= 0.0f) || p > 1.0f) throw ConfigError("sample_batch: p must be in [0, 1]");
  if (batch < 1) throw ConfigError("sample_batch: batch must be positive");
  if (seq_len < 1) throw ConfigError("sample_batch: seq_len must be positive");
  for (const Corpus* c : {&original, &next}) {
    if (static_cast<int64_t>(c->train.size()) < seq_len) {
      throw ConfigError("sample_batch: corpus train split (" + std::to_string(c->train.size()) +
                        " tokens) is shorter than seq_len " + std::to_string(seq_len));
    }
  }

  MixedBatch out;
  out.windows.batch = batch;
  out.windows.seq = seq_len;
  out.windows.tokens.reserve(static_cast<size_t>(batch * seq_len));
  out.mask.reserve(static_cast<size_t>(batch));
  for (int64_t b = 0; b < batch; ++b) {
    bool take_original = rng.uniform() < static_cast<double>(p);
    const Corpus& source = take_original ? original : next;
    const std::vector<int32_t>& stream = source.train;
    int64_t start = rng.uniform_int(static_cast<int64_t>(stream.size()) - seq_len + 1);
    out.windows.tokens.insert(out.windows.tokens.end(), stream.begin() + start,
                              stream.begin() + start + seq_len);
    out.mask.push_back(take_original ? Domain::kOriginal : Domain::kNew);
  }
  return out;
}

}  // namespace nres
