#pragma once

#include "treelm/conllu.hpp"
#include "treelm/vocab.hpp"

namespace treelm {

// A tokenized sentence with its dependency tree re-attached at the subword
// level: every continuation piece of word w hangs off w's head piece (its
// first piece), and the head piece itself points at the head piece of w's
// syntactic head. effective_heads are 1-based over subword positions with
// 0 for the root, mirroring the word-level convention.
struct ParsedSentence {
  RawSentence raw;
  std::vector<int> subword_ids;
  std::vector<int> word_of_subword;  // 0-based word index per subword
  std::vector<int> effective_heads;  // 1-based subword head, 0 = root

  int num_subwords() const { return static_cast<int>(subword_ids.size()); }
  bool is_head_piece(int pos) const {
    return pos == 0 || word_of_subword[static_cast<size_t>(pos)] !=
                           word_of_subword[static_cast<size_t>(pos) - 1];
  }
};

ParsedSentence align(const RawSentence& sentence, const Vocabulary& vocab);

// The fixed Universal Dependencies PoS tagset, sorted; unknown tags map
// to "X" so the id space is closed.
const std::vector<std::string>& upos_tagset();
int upos_id(const std::string& tag);

}  // namespace treelm
