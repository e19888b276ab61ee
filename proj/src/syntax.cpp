#include "treelm/syntax.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace treelm {

std::vector<int> subword_parents(const ParsedSentence& sentence) {
  std::vector<int> parents(static_cast<size_t>(sentence.num_subwords()));
  for (int i = 0; i < sentence.num_subwords(); ++i)
    parents[static_cast<size_t>(i)] = sentence.effective_heads[static_cast<size_t>(i)] - 1;
  return parents;
}

std::vector<std::vector<int>> children_lists(const std::vector<int>& parents) {
  std::vector<std::vector<int>> children(parents.size());
  for (size_t i = 0; i < parents.size(); ++i)
    if (parents[i] >= 0) children[static_cast<size_t>(parents[i])].push_back(static_cast<int>(i));
  return children;
}

std::vector<int> subtree_of(const std::vector<std::vector<int>>& children, int root) {
  std::vector<int> out;
  std::vector<int> stack{root};
  while (!stack.empty()) {
    int v = stack.back();
    stack.pop_back();
    out.push_back(v);
    for (int c : children[static_cast<size_t>(v)]) stack.push_back(c);
  }
  std::sort(out.begin(), out.end());
  return out;
}

int subtree_height(const std::vector<std::vector<int>>& children, int root) {
  int best = 1;
  for (int c : children[static_cast<size_t>(root)])
    best = std::max(best, 1 + subtree_height(children, c));
  return best;
}

DistanceMatrix tree_distances(const ParsedSentence& sentence) {
  const int n = sentence.num_subwords();
  const std::vector<int> parents = subword_parents(sentence);

  // Path length through depths and the lowest common ancestor:
  // d(i,j) = depth(i) + depth(j) - 2*depth(lca(i,j)).
  std::vector<int> depth(static_cast<size_t>(n), 0);
  for (int i = 0; i < n; ++i) {
    int v = i, steps = 0;
    while (parents[static_cast<size_t>(v)] >= 0) {
      v = parents[static_cast<size_t>(v)];
      if (++steps > n) throw std::invalid_argument("tree_distances: effective heads contain a cycle");
    }
    depth[static_cast<size_t>(i)] = steps;
  }

  DistanceMatrix dm;
  dm.n = n;
  dm.d.assign(static_cast<size_t>(n) * static_cast<size_t>(n), 0);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      int a = i, b = j;
      int da = depth[static_cast<size_t>(a)], db = depth[static_cast<size_t>(b)];
      while (da > db) { a = parents[static_cast<size_t>(a)]; --da; }
      while (db > da) { b = parents[static_cast<size_t>(b)]; --db; }
      while (a != b) {
        a = parents[static_cast<size_t>(a)];
        b = parents[static_cast<size_t>(b)];
        --da;
      }
      const int dist = depth[static_cast<size_t>(i)] + depth[static_cast<size_t>(j)] - 2 * da;
      dm.at(i, j) = dist;
      dm.at(j, i) = dist;
    }
  }
  return dm;
}

std::vector<int> windowed_distances(const DistanceMatrix& d) {
  const int n = d.n;
  std::vector<int> out(static_cast<size_t>(n) * static_cast<size_t>(n), 0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      int best = d.at(i, j);
      if (i - 1 >= 0) best = std::min(best, d.at(i - 1, j));
      if (i + 1 < n) best = std::min(best, d.at(i + 1, j));
      out[static_cast<size_t>(i) * static_cast<size_t>(n) + static_cast<size_t>(j)] = best;
    }
  }
  return out;
}

SlaMask sla_mask(const DistanceMatrix& d, int delta) {
  if (delta < 0) throw std::invalid_argument("sla_mask: delta must be non-negative");
  SlaMask m;
  m.n = d.n;
  m.delta = delta;
  m.dprime = windowed_distances(d);
  m.local.resize(m.dprime.size());
  for (size_t k = 0; k < m.dprime.size(); ++k) m.local[k] = m.dprime[k] <= delta ? 1 : 0;
  return m;
}

namespace {

// Marks every node of the subtree rooted at `root` (root itself included).
std::vector<char> in_subtree_flags(const std::vector<std::vector<int>>& children, int root, int n) {
  std::vector<char> flags(static_cast<size_t>(n), 0);
  for (int v : subtree_of(children, root)) flags[static_cast<size_t>(v)] = 1;
  return flags;
}

}  // namespace

std::vector<PhraseSample> sample_phrases(const ParsedSentence& sentence, Rng& rng, int k_neg,
                                         int sets_per_sentence) {
  std::vector<PhraseSample> samples;
  const int n = sentence.num_subwords();
  if (n < 3) return samples;

  const std::vector<int> parents = subword_parents(sentence);
  const auto children = children_lists(parents);

  // Qualifying phrases: subtrees of node-count height exactly 2, i.e. a
  // node with children but no grandchildren. Within such a star every
  // ordered pair of distinct members has the star center as its LCA.
  std::vector<int> star_of(static_cast<size_t>(n), -1);  // star center per member
  std::vector<int> centers;
  for (int a = 0; a < n; ++a) {
    if (children[static_cast<size_t>(a)].empty()) continue;
    if (subtree_height(children, a) != 2) continue;
    centers.push_back(a);
    star_of[static_cast<size_t>(a)] = a;
    for (int c : children[static_cast<size_t>(a)]) star_of[static_cast<size_t>(c)] = a;
  }
  if (centers.empty()) return samples;

  std::vector<int> anchors;
  for (int t = 0; t < n; ++t)
    if (star_of[static_cast<size_t>(t)] >= 0) anchors.push_back(t);

  for (int set = 0; set < sets_per_sentence; ++set) {
    const int t = anchors[rng.uniform(anchors.size())];
    const int center = star_of[static_cast<size_t>(t)];
    std::vector<int> partners;
    partners.push_back(center);
    for (int c : children[static_cast<size_t>(center)]) partners.push_back(c);
    partners.erase(std::remove(partners.begin(), partners.end(), t), partners.end());
    if (partners.empty()) continue;
    const int t_pos = partners[rng.uniform(partners.size())];

    const std::vector<char> phrase = in_subtree_flags(children, center, n);
    std::vector<int> pool;
    for (int v = 0; v < n; ++v)
      if (!phrase[static_cast<size_t>(v)]) pool.push_back(v);
    if (pool.empty()) continue;

    PhraseSample s;
    s.anchor = t;
    s.positive = t_pos;
    s.ancestor = center;
    std::vector<int> picks = rng.sample_without_replacement(static_cast<int>(pool.size()),
                                                            std::min<int>(k_neg, static_cast<int>(pool.size())));
    for (int idx : picks) s.negatives.push_back(pool[static_cast<size_t>(idx)]);
    std::sort(s.negatives.begin(), s.negatives.end());
    samples.push_back(std::move(s));
  }
  return samples;
}

std::vector<TreeSample> sample_trees(const ParsedSentence& sentence, Rng& rng, int max_tokens,
                                     int sets_per_sentence) {
  std::vector<TreeSample> samples;
  const int n = sentence.num_subwords();
  if (n < 3) return samples;

  const std::vector<int> parents = subword_parents(sentence);
  const auto children = children_lists(parents);

  std::vector<int> candidates;
  for (int r = 0; r < n; ++r) {
    const size_t size = subtree_of(children, r).size();
    if (size >= 2 && size <= static_cast<size_t>(max_tokens)) candidates.push_back(r);
  }
  if (candidates.empty()) return samples;

  std::vector<int> root_picks = rng.sample_without_replacement(
      static_cast<int>(candidates.size()), std::min<int>(sets_per_sentence, static_cast<int>(candidates.size())));

  for (int pick : root_picks) {
    const int root = candidates[static_cast<size_t>(pick)];
    const std::vector<int> positive = subtree_of(children, root);
    std::vector<char> in_pos(static_cast<size_t>(n), 0);
    for (int v : positive) in_pos[static_cast<size_t>(v)] = 1;

    // Tokens outside the subtree but sharing a tree edge with a member.
    // For a complete subtree this is exactly the root's parent.
    std::set<int> outsiders;
    for (int m : positive) {
      if (parents[static_cast<size_t>(m)] >= 0 && !in_pos[static_cast<size_t>(parents[static_cast<size_t>(m)])])
        outsiders.insert(parents[static_cast<size_t>(m)]);
      for (int c : children[static_cast<size_t>(m)])
        if (!in_pos[static_cast<size_t>(c)]) outsiders.insert(c);
    }
    if (outsiders.empty()) continue;

    struct Candidate {
      int outsider;
      int removed;
    };
    std::vector<Candidate> pairs;
    for (int o : outsiders)
      for (int m : positive)
        if (m != root) pairs.push_back({o, m});

    std::vector<TreeSample::Negative> negatives;
    std::vector<int> order = rng.sample_without_replacement(static_cast<int>(pairs.size()),
                                                            static_cast<int>(pairs.size()));
    for (int oi : order) {
      if (static_cast<int>(negatives.size()) >= 3) break;
      const Candidate& cand = pairs[static_cast<size_t>(oi)];
      // Remove the member together with its descendants inside the
      // positive tree, then graft in the outsider's full subtree.
      std::set<int> result(positive.begin(), positive.end());
      for (int v : subtree_of(children, cand.removed))
        if (in_pos[static_cast<size_t>(v)]) result.erase(v);
      for (int v : subtree_of(children, cand.outsider)) result.insert(v);
      if (result.size() > static_cast<size_t>(max_tokens)) continue;
      TreeSample::Negative neg;
      neg.substituted_root = cand.outsider;
      neg.removed = cand.removed;
      neg.tokens.assign(result.begin(), result.end());
      negatives.push_back(std::move(neg));
    }
    if (negatives.empty()) continue;

    TreeSample s;
    s.root = root;
    s.positive_tree = positive;
    s.negatives = std::move(negatives);
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace treelm
