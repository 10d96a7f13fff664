#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nres/domain.hpp"
#include "nres/model.hpp"
#include "nres/rng.hpp"

namespace nres {

// Byte-level vocabulary: token id = byte value, V = 256.
std::vector<int32_t> tokenize(const std::string& bytes);
std::string detokenize(const std::vector<int32_t>& ids);

enum class GeneratorKind { kMarkov2, kCipher };

GeneratorKind generator_from_string(const std::string& name);
std::string to_string(GeneratorKind k);

// Recipe for one synthetic language. markov2 emits an order-2 character
// chain over 'a'..'z' plus space, with a seed-determined transition table
// sharpened or flattened by `temperature`. cipher draws from the same chain
// and then relabels the bytes with a full-byte-range permutation keyed by
// `cipher_seed` (0 = identity), yielding a structurally identical but
// statistically disjoint language whose alphabet lands on mostly different
// byte ids.
struct SyntheticLanguageSpec {
  GeneratorKind kind = GeneratorKind::kMarkov2;
  uint64_t seed = 1;
  float temperature = 1.0f;  // > 0; higher flattens the transition table
  uint64_t cipher_seed = 0;  // cipher only
};

struct Corpus {
  Domain domain = Domain::kOriginal;
  std::vector<int32_t> train;
  std::vector<int32_t> heldout;
  float heldout_fraction = 0.0f;
};

// Deterministic in the spec: same spec + sizes => identical corpus.
// Requires n_tokens >= 10 * seq_len so the sampler always has room.
Corpus generate_corpus(const SyntheticLanguageSpec& spec, int64_t n_tokens,
                       float heldout_fraction, int64_t seq_len, Domain domain);

// Reads a whole byte file and splits off the trailing heldout fraction.
Corpus load_corpus(const std::string& path, float heldout_fraction, Domain domain);

struct MixedBatch {
  TokenBatch windows;  // [B x T], each row drawn whole from one corpus
  DomainMask mask;     // length B
};

// Each of the B sequences independently comes from `original` with
// probability p, else from `next`; a contiguous window of length T at a
// random offset within the chosen corpus's train split.
MixedBatch sample_batch(const Corpus& original, const Corpus& next, float p, int64_t batch,
                        int64_t seq_len, Rng& rng);

}  // namespace nres
