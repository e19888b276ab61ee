#pragma once

#include <array>
#include <string>
#include <unordered_map>
#include <vector>

#include "treelm/conllu.hpp"

namespace treelm {

// Subword vocabulary with BPE-style merges. Word-boundary convention:
// a piece that does not end its word carries the "@@" suffix, so the
// three a's in "aaab" are the identical symbol "a@@" and detokenization
// is plain concatenation with "@@" stripped.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kMask = 4;
  static constexpr int kNumSpecials = 5;
  static const std::array<const char*, kNumSpecials>& specials();
  static constexpr const char* kContinuation = "@@";

  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> pieces);

  int size() const { return static_cast<int>(pieces_.size()); }
  const std::vector<std::string>& pieces() const { return pieces_; }
  const std::string& piece(int id) const { return pieces_[static_cast<size_t>(id)]; }
  int id_of(const std::string& piece) const;          // -1 when absent
  static bool is_special(int id) { return id >= 0 && id < kNumSpecials; }

  // Greedy longest-match segmentation; unencodable words collapse to one
  // [UNK] piece.
  std::vector<int> encode_word(const std::string& word) const;
  // Inverse of encode_word for words without [UNK]; strips "@@".
  std::string decode(const std::vector<int>& ids) const;

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

 private:
  std::vector<std::string> pieces_;
  std::unordered_map<std::string, int> piece_to_id_;
};

// Greedy frequency-based merge construction starting from the corpus
// character alphabet. Deterministic: word types are processed in sorted
// order and pair-frequency ties resolve to the lexicographically smallest
// (left, right) pair. Throws std::invalid_argument when target_size is
// below the minimum feasible size or the corpus is empty.
Vocabulary build_vocab(const std::vector<RawSentence>& sentences, int target_size);

// Splits a UTF-8 string into codepoint-sized chunks; malformed bytes
// become single-byte chunks so the split is total.
std::vector<std::string> utf8_chars(const std::string& s);

}  // namespace treelm
