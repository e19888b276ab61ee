#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "treelm/artifact.hpp"
#include "treelm/checkpoint.hpp"
#include "treelm/losses.hpp"
#include "treelm/model.hpp"
#include "treelm/variant.hpp"

namespace treelm {

struct TrainPaths {
  std::string untagged_artifact;
  std::string tagged_artifact;  // required for x-variants
  std::string vocab_file;
  std::string out_dir;
  std::string resume_from;  // optional checkpoint to continue from
};

struct TrainConfig {
  std::string variant = "m";
  uint64_t seed = 42;
  int batch_size = 16;
  int steps = 100;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double warmup_frac = 0.1;
  double clip_norm = 1.0;
  double mask_rate = 0.15;
  double mask_to_mask = 0.8;
  double mask_to_random = 0.1;
  double mask_to_keep = 0.1;
  int untagged_per_tagged = 8;
  double tau = 0.1;
  int checkpoint_interval = 0;  // 0 = final checkpoint only
  bool resample_per_epoch = false;
  ModelConfig model;
  TrainPaths paths;

  std::vector<std::string> validate() const;
  std::string to_json_string() const;
  // Strict parse: unknown keys are errors; every problem is collected
  // rather than failing fast.
  static std::optional<TrainConfig> from_json_string(const std::string& text,
                                                     std::vector<std::string>& errors);
};

// One masked batch, still carrying the per-sentence syntax artifacts.
struct MlmBatch {
  bool tagged = false;
  int batch = 0;
  int seq = 0;
  std::vector<int> input_ids;    // batch*seq, [PAD] on padding
  std::vector<int> mlm_targets;  // batch*seq, -1 = not selected
  std::vector<int> pos_targets;  // batch*seq, -1 = unsupervised (empty when untagged)
  std::vector<int> lengths;
  std::vector<std::string> sent_ids;
  std::vector<const SentenceRecord*> records;
  ContrastiveBatch samples;  // tau filled by the caller
  int masked_count = 0;
};

// BERT-style masking: mask_rate of real positions are selected; selected
// positions become [MASK] / a random piece / the original id according to
// the 80/10/10-style split. Deterministic given the rng.
MlmBatch make_mlm_batch(const std::vector<const SentenceRecord*>& sentences,
                        const Vocabulary& vocab, const TrainConfig& cfg, Rng& rng, bool tagged);

// Deterministic 1:(untagged_per_tagged) interleave: every window of
// (1 + untagged_per_tagged) steps contains exactly one tagged batch at an
// rng-chosen slot. Sentence order reshuffles per epoch. Stateless in the
// step index, so resumed runs reproduce the schedule exactly.
class MixingScheduler {
 public:
  MixingScheduler(int untagged_count, int tagged_count, int batch_size, int untagged_per_tagged,
                  bool use_tagged, uint64_t seed);

  struct Pick {
    bool tagged = false;
    std::vector<int> indices;  // into the corresponding record list
  };
  Pick pick(int step) const;  // step is 1-based

 private:
  std::vector<int> batch_indices(bool tagged, int64_t batch_ordinal) const;
  int untagged_count_, tagged_count_, batch_size_, untagged_per_tagged_;
  bool use_tagged_;
  uint64_t seed_;
  mutable int64_t cached_epoch_[2] = {-1, -1};
  mutable std::vector<int> cached_order_[2];
};

// ---------------------------------------------------------------------------
// Shared step evaluation (drives training, gradcheck and eval)
// ---------------------------------------------------------------------------

template <typename T>
Array<T> local_mask_array(const std::vector<const SentenceRecord*>& records, int seq) {
  const int B = static_cast<int>(records.size());
  Array<T> mask({B, seq, seq});
  for (int b = 0; b < B; ++b) {
    const SlaMask& m = records[static_cast<size_t>(b)]->mask;
    for (int i = 0; i < seq; ++i)
      for (int j = 0; j < seq; ++j) {
        // real query rows follow the syntactic mask; padded query rows
        // fall back to the padding rule so no row is fully masked
        const bool visible = i < m.n ? (j < m.n && m.is_local(i, j)) : j < m.n;
        mask[(static_cast<int64_t>(b) * seq + i) * seq + j] = visible ? T(0) : static_cast<T>(kNegInf);
      }
  }
  return mask;
}

template <typename T>
ModelBatch<T> to_model_batch(const MlmBatch& batch, bool sla) {
  ModelBatch<T> mb;
  mb.batch = batch.batch;
  mb.seq = batch.seq;
  mb.ids = batch.input_ids;
  mb.lengths = batch.lengths;
  mb.pad_mask = pad_mask_array<T>(batch.lengths, batch.seq);
  if (sla) {
    mb.local_mask = local_mask_array<T>(batch.records, batch.seq);
    mb.has_local = true;
  }
  return mb;
}

template <typename T>
struct StepEval {
  ForwardOutput<T> fo;
  Tensor<T> total;
  std::map<std::string, double> components;
  int masked_positions = 0;
  int phrase_samples = 0;
  int tree_samples = 0;
  int skipped_tree_samples = 0;
  double gate_mean = 0.0;
};

// Forward + all loss components a variant activates, on the caller's tape.
template <typename T>
StepEval<T> evaluate_step(Tape<T>& tape, const EncoderModel<T>& model, MlmBatch& batch,
                          const Variant& variant, bool train_mode = false,
                          Rng* dropout_rng = nullptr) {
  StepEval<T> ev;
  ModelBatch<T> mb = to_model_batch<T>(batch, variant.sla);
  ev.fo = forward(tape, model, mb, train_mode, dropout_rng);

  std::map<std::string, Tensor<T>> parts;
  ScalarLoss<T> mlm = mlm_loss(ev.fo.mlm_logits, batch.mlm_targets);
  ev.masked_positions = mlm.count;
  parts["mlm"] = mlm.node;
  ev.components["mlm"] = static_cast<double>(mlm.node.value()[0]);

  if (variant.phrase) {
    ScalarLoss<T> pl = phrase_loss(tape, ev.fo, batch.lengths, batch.samples);
    ev.phrase_samples = pl.count;
    parts["phrase"] = pl.node;
    ev.components["phrase"] = static_cast<double>(pl.node.value()[0]);
  }
  if (variant.tree) {
    ScalarLoss<T> tl = tree_loss(tape, ev.fo, batch.samples);
    ev.tree_samples = tl.count;
    ev.skipped_tree_samples = batch.samples.skipped_tree_samples;
    parts["tree"] = tl.node;
    ev.components["tree"] = static_cast<double>(tl.node.value()[0]);
  }
  if (variant.pos_task) {
    std::vector<int> targets = batch.tagged ? batch.pos_targets
                                            : std::vector<int>(batch.input_ids.size(), -1);
    ScalarLoss<T> pp = pos_loss(ev.fo.pos_logits, targets);
    parts["pos"] = pp.node;
    ev.components["pos"] = static_cast<double>(pp.node.value()[0]);
  }

  ev.total = total_loss(tape, variant, parts);
  ev.components["total"] = static_cast<double>(ev.total.value()[0]);

  if (variant.sla) {
    double sum = 0.0;
    int64_t count = 0;
    for (const auto& gate : ev.fo.gates) {
      const Array<T>& gv = gate.value();
      for (int b = 0; b < batch.batch; ++b)
        for (int l = 0; l < batch.lengths[static_cast<size_t>(b)]; ++l) {
          sum += static_cast<double>(gv[static_cast<int64_t>(b) * batch.seq + l]);
          ++count;
        }
    }
    ev.gate_mean = count > 0 ? sum / static_cast<double>(count) : 0.0;
  }
  return ev;
}

// ---------------------------------------------------------------------------
// Optimizer and loop
// ---------------------------------------------------------------------------

template <typename T>
struct AdamState {
  int64_t t = 0;
  std::vector<Array<T>> m;  // parallel to model.params
  std::vector<Array<T>> v;

  static AdamState init(const EncoderModel<T>& model) {
    AdamState s;
    for (const auto& [name, a] : model.params) {
      s.m.emplace_back(a.shape);
      s.v.emplace_back(a.shape);
    }
    return s;
  }
};

struct TrainAbort : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  int steps_run = 0;
  double initial_mlm = 0.0;  // from the first executed step
  double final_mlm = 0.0;
  int zero_mask_batches = 0;
  std::string final_checkpoint;
  std::string metrics_file;
};

// Runs optimizer steps start_step+1 .. cfg.steps, appending one JSONL
// metrics record per step and checkpointing at the configured interval
// and at the end. Aborts with TrainAbort (naming the batch) when a loss
// goes non-finite.
TrainResult train_loop(const TrainConfig& cfg, const CorpusArtifact& untagged,
                       const CorpusArtifact* tagged, const Vocabulary& vocab,
                       EncoderModel<float>& model, AdamState<float>& opt, uint64_t start_step = 0);

}  // namespace treelm
