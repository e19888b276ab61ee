#pragma once

#include <cstdint>
#include <vector>

#include "treelm/corpus.hpp"
#include "treelm/rng.hpp"

namespace treelm {

// Additive attention-mask sentinel. Finite so softmax backward stays
// NaN-free; exp(-1e9) underflows to exactly zero weight in both float
// and double.
inline constexpr double kNegInf = -1e9;

// Pairwise path lengths over the (undirected) subword dependency tree.
struct DistanceMatrix {
  int n = 0;
  std::vector<int> d;  // row-major n*n

  int at(int i, int j) const { return d[static_cast<size_t>(i) * static_cast<size_t>(n) + static_cast<size_t>(j)]; }
  int& at(int i, int j) { return d[static_cast<size_t>(i) * static_cast<size_t>(n) + static_cast<size_t>(j)]; }
};

// Local-attention mask: position j is visible from position i iff the
// windowed distance D'(i,j) = min over k in {i-1,i,i+1} (clipped to the
// sentence) of D(k,j) is at most delta. Not symmetric.
struct SlaMask {
  int n = 0;
  int delta = 0;
  std::vector<int> dprime;       // row-major n*n windowed distances
  std::vector<uint8_t> local;    // row-major n*n, 1 = visible (additive 0), 0 = masked (kNegInf)

  bool is_local(int i, int j) const {
    return local[static_cast<size_t>(i) * static_cast<size_t>(n) + static_cast<size_t>(j)] != 0;
  }
  int dprime_at(int i, int j) const {
    return dprime[static_cast<size_t>(i) * static_cast<size_t>(n) + static_cast<size_t>(j)];
  }
};

// Contrastive sample over subword positions (0-based). The phrase is the
// subtree rooted at `ancestor`, which is the lowest common ancestor of
// anchor and positive and has node-count height at most 2.
struct PhraseSample {
  int anchor = 0;
  int positive = 0;
  int ancestor = 0;
  std::vector<int> negatives;
};

// Positive subtree plus perturbed negatives. Each negative records the
// external token grafted in, the removed internal member, and the
// resulting member set (always containing `root`).
struct TreeSample {
  struct Negative {
    int substituted_root = 0;
    int removed = 0;
    std::vector<int> tokens;  // sorted
  };
  int root = 0;
  std::vector<int> positive_tree;  // sorted, includes root
  std::vector<Negative> negatives;  // at most 3
};

DistanceMatrix tree_distances(const ParsedSentence& sentence);
std::vector<int> windowed_distances(const DistanceMatrix& d);
SlaMask sla_mask(const DistanceMatrix& d, int delta);

std::vector<PhraseSample> sample_phrases(const ParsedSentence& sentence, Rng& rng, int k_neg,
                                         int sets_per_sentence);
std::vector<TreeSample> sample_trees(const ParsedSentence& sentence, Rng& rng, int max_tokens,
                                     int sets_per_sentence);

// Tree helpers shared by the samplers (0-based positions; parent -1 = root).
std::vector<int> subword_parents(const ParsedSentence& sentence);
std::vector<std::vector<int>> children_lists(const std::vector<int>& parents);
std::vector<int> subtree_of(const std::vector<std::vector<int>>& children, int root);  // sorted
int subtree_height(const std::vector<std::vector<int>>& children, int root);  // node-count height

}  // namespace treelm
