#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "treelm/conllu.hpp"

namespace treelm {

// Synthetic dependency treebank for smoke tests and self-contained runs:
// a small probabilistic grammar with head-dependent word-order
// regularities (determiners and adjectives before nouns, subjects before
// the verb, case markers before their noun) and gold UPOS tags.
struct SynthOptions {
  int num_sentences = 500;
  uint64_t seed = 1;
};

std::vector<RawSentence> generate_sentences(const SynthOptions& options);
std::string generate_conllu(const SynthOptions& options);

}  // namespace treelm
