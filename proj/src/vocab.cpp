#include "treelm/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

namespace treelm {

const std::array<const char*, Vocabulary::kNumSpecials>& Vocabulary::specials() {
  static const std::array<const char*, kNumSpecials> s = {"[PAD]", "[UNK]", "[CLS]", "[SEP]",
                                                          "[MASK]"};
  return s;
}

Vocabulary::Vocabulary(std::vector<std::string> pieces) : pieces_(std::move(pieces)) {
  for (int i = 0; i < size(); ++i) {
    auto [it, inserted] = piece_to_id_.emplace(pieces_[static_cast<size_t>(i)], i);
    if (!inserted) throw std::invalid_argument("duplicate vocabulary piece: " + pieces_[static_cast<size_t>(i)]);
  }
  for (int i = 0; i < kNumSpecials; ++i) {
    if (i >= size() || pieces_[static_cast<size_t>(i)] != specials()[static_cast<size_t>(i)])
      throw std::invalid_argument("vocabulary must start with the five special pieces");
  }
}

int Vocabulary::id_of(const std::string& piece) const {
  auto it = piece_to_id_.find(piece);
  return it == piece_to_id_.end() ? -1 : it->second;
}

std::vector<std::string> utf8_chars(const std::string& s) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < s.size()) {
    const unsigned char c = static_cast<unsigned char>(s[i]);
    size_t len = 1;
    if ((c & 0x80) == 0x00) len = 1;
    else if ((c & 0xE0) == 0xC0) len = 2;
    else if ((c & 0xF0) == 0xE0) len = 3;
    else if ((c & 0xF8) == 0xF0) len = 4;
    if (i + len > s.size()) len = 1;
    for (size_t k = 1; k < len; ++k) {
      if ((static_cast<unsigned char>(s[i + k]) & 0xC0) != 0x80) {
        len = 1;
        break;
      }
    }
    out.push_back(s.substr(i, len));
    i += len;
  }
  return out;
}

std::vector<int> Vocabulary::encode_word(const std::string& word) const {
  const std::vector<std::string> chars = utf8_chars(word);
  std::vector<int> out;
  size_t i = 0;
  while (i < chars.size()) {
    int best = -1;
    size_t best_end = i;
    for (size_t j = chars.size(); j > i; --j) {
      std::string cand;
      for (size_t k = i; k < j; ++k) cand += chars[k];
      if (j != chars.size()) cand += kContinuation;
      const int id = id_of(cand);
      if (id >= kNumSpecials) {
        best = id;
        best_end = j;
        break;
      }
    }
    if (best < 0) return {kUnk};
    out.push_back(best);
    i = best_end;
  }
  if (out.empty()) out.push_back(kUnk);
  return out;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    const std::string& p = piece(id);
    if (p.size() >= 2 && p.compare(p.size() - 2, 2, kContinuation) == 0)
      out += p.substr(0, p.size() - 2);
    else
      out += p;
  }
  return out;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write vocabulary file: " + path);
  for (const auto& p : pieces_) out << p << "\n";
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open vocabulary file: " + path);
  std::vector<std::string> pieces;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    pieces.push_back(line);
  }
  while (!pieces.empty() && pieces.back().empty()) pieces.pop_back();
  return Vocabulary(std::move(pieces));
}

namespace {

using Pair = std::pair<std::string, std::string>;

struct WordEntry {
  std::vector<std::string> symbols;
  long long freq = 0;
};

void count_word_pairs(const WordEntry& w, std::map<Pair, long long>& counts, long long sign) {
  for (size_t i = 0; i + 1 < w.symbols.size(); ++i) {
    counts[{w.symbols[i], w.symbols[i + 1]}] += sign * w.freq;
  }
}

std::string merge_symbols(const std::string& left, const std::string& right) {
  // A left symbol is never word-final, so it carries "@@"; the merged
  // symbol inherits the right symbol's boundary marking.
  std::string body = left.substr(0, left.size() - 2);
  return body + right;
}

}  // namespace

Vocabulary build_vocab(const std::vector<RawSentence>& sentences, int target_size) {
  std::map<std::string, long long> word_freq;
  for (const auto& s : sentences)
    for (const auto& f : s.forms) ++word_freq[f];
  if (word_freq.empty()) throw std::invalid_argument("build_vocab: empty corpus");

  std::vector<WordEntry> words;
  words.reserve(word_freq.size());
  std::set<std::string> alphabet;
  for (const auto& [form, freq] : word_freq) {  // std::map: sorted pre-pass
    WordEntry w;
    w.freq = freq;
    const auto chars = utf8_chars(form);
    for (size_t i = 0; i < chars.size(); ++i) {
      std::string sym = chars[i];
      if (i + 1 < chars.size()) sym += Vocabulary::kContinuation;
      alphabet.insert(sym);
      w.symbols.push_back(std::move(sym));
    }
    words.push_back(std::move(w));
  }

  const int min_size = Vocabulary::kNumSpecials + static_cast<int>(alphabet.size());
  if (target_size < min_size) {
    throw std::invalid_argument("build_vocab: target_size " + std::to_string(target_size) +
                                " below minimum feasible size " + std::to_string(min_size) +
                                " (" + std::to_string(Vocabulary::kNumSpecials) + " specials + " +
                                std::to_string(alphabet.size()) + " alphabet pieces)");
  }

  std::vector<std::string> pieces;
  for (const char* sp : Vocabulary::specials()) pieces.emplace_back(sp);
  pieces.insert(pieces.end(), alphabet.begin(), alphabet.end());

  std::map<Pair, long long> pair_counts;
  std::map<Pair, std::set<size_t>> pair_words;
  for (size_t wi = 0; wi < words.size(); ++wi) {
    count_word_pairs(words[wi], pair_counts, +1);
    for (size_t i = 0; i + 1 < words[wi].symbols.size(); ++i)
      pair_words[{words[wi].symbols[i], words[wi].symbols[i + 1]}].insert(wi);
  }

  while (static_cast<int>(pieces.size()) < target_size) {
    // Highest count wins; ties go to the lexicographically smallest pair,
    // which the ordered map yields first.
    Pair best;
    long long best_count = 0;
    for (const auto& [pair, count] : pair_counts) {
      if (count > best_count) {
        best = pair;
        best_count = count;
      }
    }
    if (best_count <= 0) break;  // merge space exhausted; vocabulary stays smaller

    const std::string merged = merge_symbols(best.first, best.second);
    pieces.push_back(merged);

    const std::set<size_t> affected = pair_words[best];
    for (size_t wi : affected) {
      WordEntry& w = words[wi];
      count_word_pairs(w, pair_counts, -1);
      for (size_t i = 0; i + 1 < w.symbols.size(); ++i) {
        Pair p{w.symbols[i], w.symbols[i + 1]};
        auto it = pair_words.find(p);
        if (it != pair_words.end()) it->second.erase(wi);
      }
      std::vector<std::string> merged_syms;
      merged_syms.reserve(w.symbols.size());
      size_t i = 0;
      while (i < w.symbols.size()) {
        if (i + 1 < w.symbols.size() && w.symbols[i] == best.first &&
            w.symbols[i + 1] == best.second) {
          merged_syms.push_back(merged);
          i += 2;
        } else {
          merged_syms.push_back(w.symbols[i]);
          ++i;
        }
      }
      w.symbols = std::move(merged_syms);
      count_word_pairs(w, pair_counts, +1);
      for (size_t i2 = 0; i2 + 1 < w.symbols.size(); ++i2)
        pair_words[{w.symbols[i2], w.symbols[i2 + 1]}].insert(wi);
    }
    for (auto it = pair_counts.begin(); it != pair_counts.end();) {
      if (it->second <= 0) it = pair_counts.erase(it);
      else ++it;
    }
  }

  return Vocabulary(std::move(pieces));
}

}  // namespace treelm
