#pragma once

#include <map>
#include <string>
#include <vector>

#include "treelm/model.hpp"
#include "treelm/syntax.hpp"
#include "treelm/tensor.hpp"
#include "treelm/variant.hpp"

namespace treelm {

// ---------------------------------------------------------------------------
// Closed-form (eager) similarity helpers
// ---------------------------------------------------------------------------

// Jensen-Shannon divergence with natural log; symmetric, in [0, ln 2].
template <typename T>
T jsd(const std::vector<T>& p, const std::vector<T>& q) {
  if (p.size() != q.size())
    throw std::invalid_argument("jsd: length mismatch " + std::to_string(p.size()) + " vs " +
                                std::to_string(q.size()));
  return jsd_value(p.data(), q.data(), static_cast<int64_t>(p.size()));
}

// L = -log( exp(pos/tau) / (exp(pos/tau) + sum_i exp(neg_i/tau)) ),
// computed through log-sum-exp.
template <typename T>
T infonce(T pos, const std::vector<T>& negs, T tau) {
  if (!(tau > T(0) && tau < T(1))) throw std::invalid_argument("infonce: tau must be in (0,1)");
  if (negs.empty()) throw std::invalid_argument("infonce: need at least one negative");
  T mx = pos / tau;
  for (T n : negs) mx = std::max(mx, n / tau);
  T sum = std::exp(pos / tau - mx);
  for (T n : negs) sum += std::exp(n / tau - mx);
  return (mx + std::log(sum)) - pos / tau;
}

// ---------------------------------------------------------------------------
// Tape losses
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> infonce_node(Tensor<T> pos, const std::vector<Tensor<T>>& negs, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("infonce: tau must be in (0,1)");
  if (negs.empty()) throw std::invalid_argument("infonce: need at least one negative");
  std::vector<Tensor<T>> scaled;
  scaled.push_back(scale(pos, 1.0 / tau));
  for (const auto& n : negs) scaled.push_back(scale(n, 1.0 / tau));
  Tensor<T> scores = concat1d(scaled);
  return sub(logsumexp1d(scores), slice_axis0(scores, 0));
}

// Samples and temperature for one batch, plus the similarity values the
// losses computed, kept for logging and inspection.
struct ContrastiveBatch {
  std::vector<std::vector<PhraseSample>> phrases;  // per sentence
  std::vector<std::vector<TreeSample>> trees;      // per sentence
  double tau = 0.1;

  struct SimRecord {
    double pos = 0.0;
    std::vector<double> negs;
  };
  std::vector<SimRecord> phrase_sims;
  std::vector<SimRecord> tree_sims;
  int skipped_tree_samples = 0;
};

template <typename T>
struct ScalarLoss {
  Tensor<T> node;
  int count = 0;  // contributing units (masked positions, samples, tokens)
};

// Mean cross-entropy over masked positions; targets hold the original id
// at selected positions and ignore_id elsewhere.
template <typename T>
ScalarLoss<T> mlm_loss(Tensor<T> mlm_logits, const std::vector<int>& targets, int ignore_id = -1) {
  int count = 0;
  for (int t : targets)
    if (t != ignore_id) ++count;
  return {cross_entropy_mean(mlm_logits, targets, ignore_id), count};
}

// Mean token cross-entropy over supervised positions only (callers put
// ignore_id at padding, continuation pieces, and unsupervised sentences).
template <typename T>
ScalarLoss<T> pos_loss(Tensor<T> pos_logits, const std::vector<int>& targets, int ignore_id = -1) {
  int count = 0;
  for (int t : targets)
    if (t != ignore_id) ++count;
  return {cross_entropy_mean(pos_logits, targets, ignore_id), count};
}

namespace detail {

// Attention row of position `pos` for (sentence, head), cut to the real
// length and renormalized so padding mass cannot distort the divergence.
template <typename T>
Tensor<T> attention_row(Tensor<T> attn, int sentence, int head, int pos, int length) {
  Tensor<T> per_sentence = slice_axis0(attn, sentence);
  Tensor<T> per_head = slice_axis0(per_sentence, head);
  Tensor<T> row = slice_axis0(per_head, pos);
  return normalize1d(slice1d(row, 0, length));
}

// Root-vs-weighted-members similarity of one token set: softmax of the
// root's dot products against the other members weights their states, and
// the similarity is the cosine between that sum and the root state.
template <typename T>
Tensor<T> tree_similarity(Tensor<T> states, int root, const std::vector<int>& members) {
  std::vector<int> child;
  for (int m : members)
    if (m != root) child.push_back(m);
  Tensor<T> zr = reshape(take_rows(states, {root}), {states.shape()[1]});
  Tensor<T> zc = take_rows(states, child);
  Tensor<T> scores = reshape(matmul(zc, reshape(zr, {states.shape()[1], 1})),
                             {static_cast<int>(child.size())});
  Tensor<T> e = softmax(scores, -1);
  Tensor<T> weighted = reshape(matmul(reshape(e, {1, static_cast<int>(child.size())}), zc),
                               {states.shape()[1]});
  return cosine_similarity(zr, weighted);
}

}  // namespace detail

// Phrase-guided contrastive loss. Similarities are negative JSD between
// last-layer attention rows, averaged across heads, then pushed through
// InfoNCE; the batch loss is the mean over samples and 0 with no samples.
template <typename T>
ScalarLoss<T> phrase_loss(Tape<T>& tape, const ForwardOutput<T>& fo,
                          const std::vector<int>& lengths, ContrastiveBatch& batch) {
  if (!(batch.tau > 0.0 && batch.tau < 1.0))
    throw std::invalid_argument("phrase_loss: tau must be in (0,1)");
  const int heads = fo.attn_global.shape()[1];
  std::vector<Tensor<T>> sample_losses;

  for (size_t s = 0; s < batch.phrases.size(); ++s) {
    const int n = lengths[s];
    for (const PhraseSample& ps : batch.phrases[s]) {
      if (ps.negatives.empty()) continue;
      auto mean_sim = [&](int other) {
        std::vector<Tensor<T>> per_head;
        for (int h = 0; h < heads; ++h) {
          Tensor<T> a = detail::attention_row(fo.attn_global, static_cast<int>(s), h, ps.anchor, n);
          Tensor<T> b = detail::attention_row(fo.attn_global, static_cast<int>(s), h, other, n);
          per_head.push_back(scale(jsd1d(a, b), -1.0));
        }
        return reduce_mean(concat1d(per_head));
      };
      Tensor<T> pos = mean_sim(ps.positive);
      std::vector<Tensor<T>> negs;
      for (int t : ps.negatives) negs.push_back(mean_sim(t));

      ContrastiveBatch::SimRecord rec;
      rec.pos = static_cast<double>(pos.value()[0]);
      for (const auto& ng : negs) rec.negs.push_back(static_cast<double>(ng.value()[0]));
      batch.phrase_sims.push_back(std::move(rec));

      sample_losses.push_back(infonce_node(pos, negs, batch.tau));
    }
  }
  if (sample_losses.empty()) return {tape.constant(Array<T>::scalar(T(0))), 0};
  return {reduce_mean(concat1d(sample_losses)), static_cast<int>(sample_losses.size())};
}

// Tree-guided contrastive loss over last-layer hidden states.
template <typename T>
ScalarLoss<T> tree_loss(Tape<T>& tape, const ForwardOutput<T>& fo, ContrastiveBatch& batch) {
  if (!(batch.tau > 0.0 && batch.tau < 1.0))
    throw std::invalid_argument("tree_loss: tau must be in (0,1)");
  std::vector<Tensor<T>> sample_losses;

  for (size_t s = 0; s < batch.trees.size(); ++s) {
    Tensor<T> states = slice_axis0(fo.hidden, static_cast<int>(s));  // (L, H)
    for (const TreeSample& ts : batch.trees[s]) {
      if (ts.negatives.empty()) continue;
      if (ts.positive_tree.size() < 2) {
        ++batch.skipped_tree_samples;  // no members besides the root
        continue;
      }
      Tensor<T> pos = detail::tree_similarity(states, ts.root, ts.positive_tree);
      std::vector<Tensor<T>> negs;
      for (const auto& neg : ts.negatives)
        negs.push_back(detail::tree_similarity(states, ts.root, neg.tokens));

      ContrastiveBatch::SimRecord rec;
      rec.pos = static_cast<double>(pos.value()[0]);
      for (const auto& ng : negs) rec.negs.push_back(static_cast<double>(ng.value()[0]));
      batch.tree_sims.push_back(std::move(rec));

      sample_losses.push_back(infonce_node(pos, negs, batch.tau));
    }
  }
  if (sample_losses.empty()) return {tape.constant(Array<T>::scalar(T(0))), 0};
  return {reduce_mean(concat1d(sample_losses)), static_cast<int>(sample_losses.size())};
}

// Unweighted sum of the components a variant activates. Throws when a
// required component is missing from `parts`.
template <typename T>
Tensor<T> total_loss(Tape<T>& tape, const Variant& variant,
                     const std::map<std::string, Tensor<T>>& parts) {
  (void)tape;
  std::vector<std::string> needed = {"mlm"};
  if (variant.phrase) needed.push_back("phrase");
  if (variant.tree) needed.push_back("tree");
  if (variant.pos_task) needed.push_back("pos");
  Tensor<T> total;
  for (const auto& name : needed) {
    auto it = parts.find(name);
    if (it == parts.end())
      throw std::invalid_argument("total_loss: variant " + variant.name +
                                  " requires missing component '" + name + "'");
    total = total.valid() ? add(total, it->second) : it->second;
  }
  return total;
}

}  // namespace treelm
