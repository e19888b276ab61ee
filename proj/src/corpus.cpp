#include "treelm/corpus.hpp"

#include <algorithm>
#include <stdexcept>

namespace treelm {

ParsedSentence align(const RawSentence& sentence, const Vocabulary& vocab) {
  ParsedSentence out;
  out.raw = sentence;

  const int n_words = sentence.size();
  std::vector<int> head_piece_of_word(static_cast<size_t>(n_words), 0);  // 0-based subword pos
  for (int w = 0; w < n_words; ++w) {
    const std::vector<int> ids = vocab.encode_word(sentence.forms[static_cast<size_t>(w)]);
    head_piece_of_word[static_cast<size_t>(w)] = out.num_subwords();
    for (int id : ids) {
      out.subword_ids.push_back(id);
      out.word_of_subword.push_back(w);
    }
  }

  out.effective_heads.resize(out.subword_ids.size(), 0);
  for (int p = 0; p < out.num_subwords(); ++p) {
    const int w = out.word_of_subword[static_cast<size_t>(p)];
    const int head_piece = head_piece_of_word[static_cast<size_t>(w)];
    if (p != head_piece) {
      // continuation piece: child of its own word's head piece
      out.effective_heads[static_cast<size_t>(p)] = head_piece + 1;
    } else {
      const int word_head = sentence.heads[static_cast<size_t>(w)];  // 1-based, 0 = root
      out.effective_heads[static_cast<size_t>(p)] =
          word_head == 0 ? 0 : head_piece_of_word[static_cast<size_t>(word_head - 1)] + 1;
    }
  }
  return out;
}

const std::vector<std::string>& upos_tagset() {
  static const std::vector<std::string> tags = {"ADJ",  "ADP",   "ADV",  "AUX",  "CCONJ", "DET",
                                                "INTJ", "NOUN",  "NUM",  "PART", "PRON",  "PROPN",
                                                "PUNCT", "SCONJ", "SYM",  "VERB", "X"};
  return tags;
}

int upos_id(const std::string& tag) {
  const auto& tags = upos_tagset();
  auto it = std::lower_bound(tags.begin(), tags.end(), tag);
  if (it != tags.end() && *it == tag) return static_cast<int>(it - tags.begin());
  return upos_id("X");
}

}  // namespace treelm
