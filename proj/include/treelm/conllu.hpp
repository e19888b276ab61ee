#pragma once

#include <istream>
#include <optional>
#include <string>
#include <vector>

namespace treelm {

// One dependency-annotated sentence as read from CoNLL-U basic nodes.
// heads are 1-based word indices, 0 marks the root.
struct RawSentence {
  std::string sent_id;
  std::vector<std::string> forms;
  std::vector<std::string> upos;
  std::vector<int> heads;
  std::vector<std::string> deprels;

  int size() const { return static_cast<int>(forms.size()); }
};

struct Diagnostic {
  int line = 0;  // 1-based line in the input; 0 when not tied to a line
  std::string sent_id;
  std::string message;
};

struct ConlluResult {
  std::vector<RawSentence> sentences;
  std::vector<Diagnostic> diagnostics;
};

// Returns an explanation if `heads` does not describe a single rooted tree
// (wrong range, self-loop, zero or multiple roots, cycle), nullopt if valid.
std::optional<std::string> tree_violation(const std::vector<int>& heads);

// Tolerant CoNLL-U reader. Multiword-token ranges and empty nodes are
// skipped; malformed or invalid-tree sentences are dropped with a
// diagnostic. Never throws on input content.
ConlluResult parse_conllu(std::istream& in);
ConlluResult parse_conllu_string(const std::string& text);
ConlluResult parse_conllu_file(const std::string& path);  // throws on unreadable file

// Serializes the retained columns (FORM, UPOS, HEAD, DEPREL); the other
// CoNLL-U columns are written as "_".
std::string to_conllu(const RawSentence& s);
std::string to_conllu(const std::vector<RawSentence>& sentences);

}  // namespace treelm
