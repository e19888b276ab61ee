#include "treelm/conllu.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace treelm {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    size_t pos = line.find('\t', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

bool parse_int(const std::string& s, int& out) {
  if (s.empty()) return false;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

bool all_digits(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s)
    if (c < '0' || c > '9') return false;
  return true;
}

struct BlockState {
  RawSentence sent;
  bool bad = false;
  int first_line = 0;
  bool has_sent_id = false;
};

}  // namespace

std::optional<std::string> tree_violation(const std::vector<int>& heads) {
  const int n = static_cast<int>(heads.size());
  if (n < 1) return "empty sentence";
  int roots = 0;
  for (int i = 0; i < n; ++i) {
    const int h = heads[static_cast<size_t>(i)];
    if (h < 0 || h > n) return "head index " + std::to_string(h) + " out of range [0," + std::to_string(n) + "]";
    if (h == i + 1) return "token " + std::to_string(i + 1) + " is its own head";
    if (h == 0) ++roots;
  }
  if (roots == 0) return "no root token";
  if (roots > 1) return std::to_string(roots) + " root tokens";
  // With exactly one root and no self-loops, acyclicity implies connectivity:
  // every walk up the head chain must reach 0 within n steps.
  for (int i = 0; i < n; ++i) {
    int cur = i + 1;
    int steps = 0;
    while (cur != 0) {
      cur = heads[static_cast<size_t>(cur - 1)];
      if (++steps > n) return "head cycle involving token " + std::to_string(i + 1);
    }
  }
  return std::nullopt;
}

ConlluResult parse_conllu(std::istream& in) {
  ConlluResult result;
  BlockState block;
  int line_no = 0;
  int auto_id = 0;

  auto finalize = [&](void) {
    if (block.sent.forms.empty() && !block.bad) {
      block = BlockState{};
      return;
    }
    if (!block.has_sent_id) block.sent.sent_id = "s" + std::to_string(auto_id);
    ++auto_id;
    if (!block.bad) {
      if (auto why = tree_violation(block.sent.heads)) {
        result.diagnostics.push_back({block.first_line, block.sent.sent_id, "dropped: " + *why});
        block.bad = true;
      }
    }
    if (!block.bad) result.sentences.push_back(std::move(block.sent));
    block = BlockState{};
  };

  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      finalize();
      continue;
    }
    if (line[0] == '#') {
      if (block.first_line == 0) block.first_line = line_no;
      // Recognize "# sent_id = X" with flexible spacing.
      std::string body = line.substr(1);
      size_t eq = body.find('=');
      if (eq != std::string::npos) {
        auto trim = [](std::string s) {
          size_t a = s.find_first_not_of(" \t");
          size_t b = s.find_last_not_of(" \t");
          return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        if (trim(body.substr(0, eq)) == "sent_id") {
          block.sent.sent_id = trim(body.substr(eq + 1));
          block.has_sent_id = !block.sent.sent_id.empty();
        }
      }
      continue;
    }

    if (block.first_line == 0) block.first_line = line_no;
    if (block.bad) continue;  // keep consuming the block, already diagnosed

    std::vector<std::string> cols = split_tabs(line);
    if (cols.size() != 10) {
      result.diagnostics.push_back({line_no, block.sent.sent_id,
                                    "dropped: expected 10 tab-separated columns, got " +
                                        std::to_string(cols.size())});
      block.bad = true;
      continue;
    }
    const std::string& id = cols[0];
    if (id.find('-') != std::string::npos) continue;  // multiword token range
    if (id.find('.') != std::string::npos) continue;  // empty node
    if (!all_digits(id)) {
      result.diagnostics.push_back({line_no, block.sent.sent_id, "dropped: malformed token id '" + id + "'"});
      block.bad = true;
      continue;
    }
    int id_val = 0;
    if (!parse_int(id, id_val) || id_val != block.sent.size() + 1) {
      result.diagnostics.push_back(
          {line_no, block.sent.sent_id, "dropped: non-sequential token id '" + id + "'"});
      block.bad = true;
      continue;
    }
    int head = 0;
    if (!parse_int(cols[6], head)) {
      result.diagnostics.push_back(
          {line_no, block.sent.sent_id, "dropped: non-integer HEAD '" + cols[6] + "'"});
      block.bad = true;
      continue;
    }
    block.sent.forms.push_back(cols[1]);
    block.sent.upos.push_back(cols[3]);
    block.sent.heads.push_back(head);
    block.sent.deprels.push_back(cols[7]);
  }
  finalize();
  return result;
}

ConlluResult parse_conllu_string(const std::string& text) {
  std::istringstream in(text);
  return parse_conllu(in);
}

ConlluResult parse_conllu_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open CoNLL-U file: " + path);
  return parse_conllu(in);
}

std::string to_conllu(const RawSentence& s) {
  std::ostringstream out;
  out << "# sent_id = " << s.sent_id << "\n";
  for (int i = 0; i < s.size(); ++i) {
    const auto u = static_cast<size_t>(i);
    out << (i + 1) << '\t' << s.forms[u] << "\t_\t" << s.upos[u] << "\t_\t_\t" << s.heads[u]
        << '\t' << s.deprels[u] << "\t_\t_\n";
  }
  out << "\n";
  return out.str();
}

std::string to_conllu(const std::vector<RawSentence>& sentences) {
  std::string out;
  for (const auto& s : sentences) out += to_conllu(s);
  return out;
}

}  // namespace treelm
