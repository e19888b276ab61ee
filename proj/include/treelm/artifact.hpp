#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "treelm/corpus.hpp"
#include "treelm/syntax.hpp"

namespace treelm {

// One preprocessed sentence: tokenization, re-attached tree, distance
// matrix, local-attention mask and contrastive samples.
struct SentenceRecord {
  ParsedSentence sentence;
  DistanceMatrix distances;
  SlaMask mask;
  std::vector<PhraseSample> phrases;
  std::vector<TreeSample> trees;
};

struct PreprocessParams {
  uint64_t seed = 42;
  int delta = 2;
  int k_neg = 3;
  int sets_per_sentence = 2;
  int max_tokens = 10;
  int max_len = 128;  // sentences longer than this many subwords are dropped
};

struct CorpusArtifact {
  PreprocessParams params;
  int vocab_size = 0;
  std::vector<SentenceRecord> records;
};

struct PreprocessStats {
  int input_sentences = 0;
  int kept = 0;
  int dropped_too_long = 0;
  std::vector<Diagnostic> diagnostics;
};

// Runs align + distances + mask + samplers over every sentence. Sampler
// randomness is drawn from a per-sentence stream derived from
// (seed, sent_id), so sentences can be processed in any order.
CorpusArtifact preprocess_corpus(const std::vector<RawSentence>& sentences, const Vocabulary& vocab,
                                 const PreprocessParams& params, PreprocessStats* stats = nullptr);

// Line-delimited JSON: one header line, then one record per sentence.
std::string artifact_to_jsonl(const CorpusArtifact& artifact);
CorpusArtifact artifact_from_jsonl(const std::string& text);
void save_artifact(const CorpusArtifact& artifact, const std::string& path);
CorpusArtifact load_artifact(const std::string& path);

}  // namespace treelm
