#include "treelm/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

namespace treelm {

using nlohmann::json;

// ---------------------------------------------------------------------------
// TrainConfig
// ---------------------------------------------------------------------------

std::vector<std::string> TrainConfig::validate() const {
  std::vector<std::string> errors;
  if (!Variant::parse(variant)) {
    std::string names;
    for (const auto& g : Variant::grid()) names += (names.empty() ? "" : ", ") + g;
    errors.push_back("unknown variant '" + variant + "' (expected one of: " + names + ")");
  }
  if (batch_size < 1) errors.push_back("batch_size must be >= 1");
  if (steps < 0) errors.push_back("steps must be >= 0");
  if (lr <= 0.0) errors.push_back("lr must be > 0");
  if (beta1 < 0.0 || beta1 >= 1.0) errors.push_back("beta1 must be in [0,1)");
  if (beta2 < 0.0 || beta2 >= 1.0) errors.push_back("beta2 must be in [0,1)");
  if (adam_eps <= 0.0) errors.push_back("adam_eps must be > 0");
  if (warmup_frac < 0.0 || warmup_frac > 1.0) errors.push_back("warmup_frac must be in [0,1]");
  if (clip_norm <= 0.0) errors.push_back("clip_norm must be > 0");
  if (mask_rate < 0.0 || mask_rate > 1.0) errors.push_back("mask_rate must be in [0,1]");
  for (auto [v, name] : {std::pair<double, const char*>{mask_to_mask, "mask_to_mask"},
                         {mask_to_random, "mask_to_random"},
                         {mask_to_keep, "mask_to_keep"}})
    if (v < 0.0 || v > 1.0) errors.push_back(std::string(name) + " must be in [0,1]");
  if (std::abs(mask_to_mask + mask_to_random + mask_to_keep - 1.0) > 1e-9)
    errors.push_back("mask split must sum to 1");
  if (untagged_per_tagged < 1) errors.push_back("untagged_per_tagged must be >= 1");
  if (tau <= 0.0 || tau >= 1.0) errors.push_back("tau must be in (0,1)");
  if (checkpoint_interval < 0) errors.push_back("checkpoint_interval must be >= 0");
  for (const auto& e : model.validate()) errors.push_back("model: " + e);
  const auto v = Variant::parse(variant);
  if (v && v->sla != model.sla_enabled)
    errors.push_back("variant '" + variant + "' and model.sla_enabled disagree");
  if (v && v->pos_task && paths.tagged_artifact.empty())
    errors.push_back("variant '" + variant + "' needs paths.tagged_artifact (gold-tagged data)");
  if (paths.untagged_artifact.empty()) errors.push_back("paths.untagged_artifact is required");
  if (paths.vocab_file.empty()) errors.push_back("paths.vocab_file is required");
  if (paths.out_dir.empty()) errors.push_back("paths.out_dir is required");
  return errors;
}

std::string TrainConfig::to_json_string() const {
  json j{{"variant", variant},
         {"seed", seed},
         {"batch_size", batch_size},
         {"steps", steps},
         {"lr", lr},
         {"beta1", beta1},
         {"beta2", beta2},
         {"adam_eps", adam_eps},
         {"warmup_frac", warmup_frac},
         {"clip_norm", clip_norm},
         {"mask_rate", mask_rate},
         {"mask_to_mask", mask_to_mask},
         {"mask_to_random", mask_to_random},
         {"mask_to_keep", mask_to_keep},
         {"untagged_per_tagged", untagged_per_tagged},
         {"tau", tau},
         {"checkpoint_interval", checkpoint_interval},
         {"resample_per_epoch", resample_per_epoch},
         {"model",
          {{"layers", model.layers},
           {"hidden", model.hidden},
           {"heads", model.heads},
           {"ffn", model.ffn},
           {"vocab", model.vocab},
           {"max_len", model.max_len},
           {"tagset", model.tagset},
           {"sla_enabled", model.sla_enabled},
           {"delta", model.delta},
           {"dropout", model.dropout},
           {"precision", model.precision}}},
         {"paths",
          {{"untagged_artifact", paths.untagged_artifact},
           {"tagged_artifact", paths.tagged_artifact},
           {"vocab_file", paths.vocab_file},
           {"out_dir", paths.out_dir},
           {"resume_from", paths.resume_from}}}};
  return j.dump(2);
}

namespace {

// Pulls `key` out of `j`, recording type errors; marks the key consumed.
template <typename V>
void take(const json& j, std::set<std::string>& seen, const char* key, V& out,
          std::vector<std::string>& errors) {
  seen.insert(key);
  auto it = j.find(key);
  if (it == j.end()) return;  // keep default
  try {
    out = it->get<V>();
  } catch (const json::exception&) {
    errors.push_back(std::string("key '") + key + "' has the wrong type");
  }
}

void reject_unknown(const json& j, const std::set<std::string>& seen, const std::string& scope,
                    std::vector<std::string>& errors) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!seen.count(it.key()))
      errors.push_back("unknown key '" + scope + it.key() + "'");
}

}  // namespace

std::optional<TrainConfig> TrainConfig::from_json_string(const std::string& text,
                                                         std::vector<std::string>& errors) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    errors.push_back(std::string("config is not valid JSON: ") + e.what());
    return std::nullopt;
  }
  if (!j.is_object()) {
    errors.push_back("config root must be a JSON object");
    return std::nullopt;
  }
  TrainConfig cfg;
  std::set<std::string> seen;
  take(j, seen, "variant", cfg.variant, errors);
  take(j, seen, "seed", cfg.seed, errors);
  take(j, seen, "batch_size", cfg.batch_size, errors);
  take(j, seen, "steps", cfg.steps, errors);
  take(j, seen, "lr", cfg.lr, errors);
  take(j, seen, "beta1", cfg.beta1, errors);
  take(j, seen, "beta2", cfg.beta2, errors);
  take(j, seen, "adam_eps", cfg.adam_eps, errors);
  take(j, seen, "warmup_frac", cfg.warmup_frac, errors);
  take(j, seen, "clip_norm", cfg.clip_norm, errors);
  take(j, seen, "mask_rate", cfg.mask_rate, errors);
  take(j, seen, "mask_to_mask", cfg.mask_to_mask, errors);
  take(j, seen, "mask_to_random", cfg.mask_to_random, errors);
  take(j, seen, "mask_to_keep", cfg.mask_to_keep, errors);
  take(j, seen, "untagged_per_tagged", cfg.untagged_per_tagged, errors);
  take(j, seen, "tau", cfg.tau, errors);
  take(j, seen, "checkpoint_interval", cfg.checkpoint_interval, errors);
  take(j, seen, "resample_per_epoch", cfg.resample_per_epoch, errors);

  seen.insert("model");
  if (j.contains("model")) {
    const json& m = j["model"];
    if (!m.is_object()) {
      errors.push_back("'model' must be an object");
    } else {
      std::set<std::string> mseen;
      take(m, mseen, "layers", cfg.model.layers, errors);
      take(m, mseen, "hidden", cfg.model.hidden, errors);
      take(m, mseen, "heads", cfg.model.heads, errors);
      take(m, mseen, "ffn", cfg.model.ffn, errors);
      take(m, mseen, "vocab", cfg.model.vocab, errors);
      take(m, mseen, "max_len", cfg.model.max_len, errors);
      take(m, mseen, "tagset", cfg.model.tagset, errors);
      take(m, mseen, "sla_enabled", cfg.model.sla_enabled, errors);
      take(m, mseen, "delta", cfg.model.delta, errors);
      take(m, mseen, "dropout", cfg.model.dropout, errors);
      take(m, mseen, "precision", cfg.model.precision, errors);
      reject_unknown(m, mseen, "model.", errors);
    }
  }
  seen.insert("paths");
  if (j.contains("paths")) {
    const json& p = j["paths"];
    if (!p.is_object()) {
      errors.push_back("'paths' must be an object");
    } else {
      std::set<std::string> pseen;
      take(p, pseen, "untagged_artifact", cfg.paths.untagged_artifact, errors);
      take(p, pseen, "tagged_artifact", cfg.paths.tagged_artifact, errors);
      take(p, pseen, "vocab_file", cfg.paths.vocab_file, errors);
      take(p, pseen, "out_dir", cfg.paths.out_dir, errors);
      take(p, pseen, "resume_from", cfg.paths.resume_from, errors);
      reject_unknown(p, pseen, "paths.", errors);
    }
  }
  reject_unknown(j, seen, "", errors);
  if (!errors.empty()) return std::nullopt;

  // A variant that uses SLA implies the model switch unless the config
  // explicitly set it (grid names are authoritative).
  const auto v = Variant::parse(cfg.variant);
  if (v && !j.contains("model")) cfg.model.sla_enabled = v->sla;
  if (v && j.contains("model") && !j["model"].contains("sla_enabled"))
    cfg.model.sla_enabled = v->sla;
  return cfg;
}

// ---------------------------------------------------------------------------
// Masking
// ---------------------------------------------------------------------------

MlmBatch make_mlm_batch(const std::vector<const SentenceRecord*>& sentences,
                        const Vocabulary& vocab, const TrainConfig& cfg, Rng& rng, bool tagged) {
  MlmBatch batch;
  batch.tagged = tagged;
  batch.batch = static_cast<int>(sentences.size());
  batch.seq = 1;
  for (const auto* rec : sentences)
    batch.seq = std::max(batch.seq, rec->sentence.num_subwords());

  const int64_t total = static_cast<int64_t>(batch.batch) * batch.seq;
  batch.input_ids.assign(static_cast<size_t>(total), Vocabulary::kPad);
  batch.mlm_targets.assign(static_cast<size_t>(total), -1);
  batch.pos_targets.assign(static_cast<size_t>(total), -1);
  batch.samples.tau = cfg.tau;

  const int random_lo = Vocabulary::kNumSpecials;
  const int random_span = std::max(1, vocab.size() - random_lo);

  for (int b = 0; b < batch.batch; ++b) {
    const SentenceRecord& rec = *sentences[static_cast<size_t>(b)];
    const int n = rec.sentence.num_subwords();
    batch.lengths.push_back(n);
    batch.sent_ids.push_back(rec.sentence.raw.sent_id);
    batch.records.push_back(&rec);
    batch.samples.phrases.push_back(rec.phrases);
    batch.samples.trees.push_back(rec.trees);
    for (int p = 0; p < n; ++p) {
      const int64_t flat = static_cast<int64_t>(b) * batch.seq + p;
      const int orig = rec.sentence.subword_ids[static_cast<size_t>(p)];
      batch.input_ids[static_cast<size_t>(flat)] = orig;
      if (tagged && rec.sentence.is_head_piece(p)) {
        const int w = rec.sentence.word_of_subword[static_cast<size_t>(p)];
        batch.pos_targets[static_cast<size_t>(flat)] =
            upos_id(rec.sentence.raw.upos[static_cast<size_t>(w)]);
      }
      if (rng.bernoulli(cfg.mask_rate)) {
        batch.mlm_targets[static_cast<size_t>(flat)] = orig;
        ++batch.masked_count;
        const double u = rng.next_double();
        if (u < cfg.mask_to_mask) {
          batch.input_ids[static_cast<size_t>(flat)] = Vocabulary::kMask;
        } else if (u < cfg.mask_to_mask + cfg.mask_to_random) {
          batch.input_ids[static_cast<size_t>(flat)] =
              random_lo + static_cast<int>(rng.uniform(static_cast<uint64_t>(random_span)));
        }  // else keep the original id
      }
    }
  }
  return batch;
}

// ---------------------------------------------------------------------------
// MixingScheduler
// ---------------------------------------------------------------------------

MixingScheduler::MixingScheduler(int untagged_count, int tagged_count, int batch_size,
                                 int untagged_per_tagged, bool use_tagged, uint64_t seed)
    : untagged_count_(untagged_count),
      tagged_count_(tagged_count),
      batch_size_(batch_size),
      untagged_per_tagged_(untagged_per_tagged),
      use_tagged_(use_tagged),
      seed_(seed) {
  if (untagged_count_ < 1) throw std::invalid_argument("scheduler: untagged corpus is empty");
  if (use_tagged_ && tagged_count_ < 1)
    throw std::invalid_argument("scheduler: variant needs tagged data but the tagged corpus is empty");
}

std::vector<int> MixingScheduler::batch_indices(bool tagged, int64_t batch_ordinal) const {
  const int count = tagged ? tagged_count_ : untagged_count_;
  const int slot = tagged ? 1 : 0;
  std::vector<int> out;
  out.reserve(static_cast<size_t>(batch_size_));
  for (int k = 0; k < batch_size_; ++k) {
    const int64_t flat = batch_ordinal * batch_size_ + k;
    const int64_t epoch = flat / count;
    const int64_t offset = flat % count;
    if (cached_epoch_[slot] != epoch) {
      std::vector<int> order(static_cast<size_t>(count));
      for (int i = 0; i < count; ++i) order[static_cast<size_t>(i)] = i;
      Rng rng(stream_hash(seed_, tagged ? "tagged-epoch" : "untagged-epoch",
                          static_cast<uint64_t>(epoch)));
      rng.shuffle(order);
      cached_order_[slot] = std::move(order);
      cached_epoch_[slot] = epoch;
    }
    out.push_back(cached_order_[slot][static_cast<size_t>(offset)]);
  }
  return out;
}

MixingScheduler::Pick MixingScheduler::pick(int step) const {
  Pick p;
  if (!use_tagged_) {
    p.tagged = false;
    p.indices = batch_indices(false, step - 1);
    return p;
  }
  const int window_len = untagged_per_tagged_ + 1;
  const int64_t window = (step - 1) / window_len;
  const int offset = static_cast<int>((step - 1) % window_len);
  Rng slot_rng(stream_hash(seed_, "mix-window", static_cast<uint64_t>(window)));
  const int tagged_slot = static_cast<int>(slot_rng.uniform(static_cast<uint64_t>(window_len)));
  p.tagged = offset == tagged_slot;
  if (p.tagged) {
    p.indices = batch_indices(true, window);
  } else {
    // untagged ordinal = untagged steps before this one
    const int64_t before_window = window * untagged_per_tagged_;
    const int64_t in_window = offset - (offset > tagged_slot ? 1 : 0);
    p.indices = batch_indices(false, before_window + in_window);
  }
  return p;
}

// ---------------------------------------------------------------------------
// train_loop
// ---------------------------------------------------------------------------

namespace {

double global_grad_norm(const std::vector<std::pair<std::string, Tensor<float>>>& param_nodes) {
  double sum = 0.0;
  for (const auto& [name, node] : param_nodes) {
    const Array<float>& g = node.grad();
    if (g.empty()) continue;
    for (int64_t i = 0; i < g.numel(); ++i) sum += static_cast<double>(g[i]) * g[i];
  }
  return std::sqrt(sum);
}

}  // namespace

TrainResult train_loop(const TrainConfig& cfg, const CorpusArtifact& untagged,
                       const CorpusArtifact* tagged, const Vocabulary& vocab,
                       EncoderModel<float>& model, AdamState<float>& opt, uint64_t start_step) {
  const auto variant_opt = Variant::parse(cfg.variant);
  if (!variant_opt) throw std::invalid_argument("train_loop: unknown variant " + cfg.variant);
  const Variant variant = *variant_opt;
  if (variant.pos_task && (tagged == nullptr || tagged->records.empty()))
    throw std::invalid_argument("train_loop: variant " + cfg.variant +
                                " requires tagged data but none was provided");
  if (untagged.params.delta != cfg.model.delta)
    throw std::invalid_argument("train_loop: artifact delta " +
                                std::to_string(untagged.params.delta) +
                                " does not match model delta " + std::to_string(cfg.model.delta));

  std::filesystem::create_directories(cfg.paths.out_dir);
  const std::string metrics_path = cfg.paths.out_dir + "/metrics.jsonl";
  std::ofstream metrics(metrics_path,
                        start_step == 0 ? std::ios::trunc : (std::ios::app | std::ios::ate));
  if (!metrics) throw std::runtime_error("cannot write metrics file: " + metrics_path);

  MixingScheduler scheduler(static_cast<int>(untagged.records.size()),
                            tagged ? static_cast<int>(tagged->records.size()) : 0, cfg.batch_size,
                            cfg.untagged_per_tagged, variant.pos_task, cfg.seed);

  // index by name once; parameter order is stable
  std::map<std::string, size_t> param_index;
  for (size_t i = 0; i < model.params.size(); ++i) param_index[model.params[i].first] = i;

  auto write_checkpoint = [&](uint64_t step, const std::string& name) {
    Checkpoint<float> ckpt;
    ckpt.config_json = cfg.to_json_string();
    ckpt.step = step;
    ckpt.params = model.params;
    ckpt.has_optimizer = true;
    ckpt.adam_t = opt.t;
    ckpt.adam_m = opt.m;
    ckpt.adam_v = opt.v;
    const std::string path = cfg.paths.out_dir + "/" + name;
    save_checkpoint(ckpt, path);
    return path;
  };

  TrainResult result;
  result.metrics_file = metrics_path;
  const int warmup_steps = std::max(1, static_cast<int>(std::ceil(cfg.warmup_frac * cfg.steps)));

  for (int step = static_cast<int>(start_step) + 1; step <= cfg.steps; ++step) {
    const MixingScheduler::Pick pick = scheduler.pick(step);
    const CorpusArtifact& source = pick.tagged ? *tagged : untagged;
    std::vector<const SentenceRecord*> sentences;
    for (int idx : pick.indices) sentences.push_back(&source.records[static_cast<size_t>(idx)]);

    Rng mask_rng(stream_hash(cfg.seed, "mask", static_cast<uint64_t>(step)));
    MlmBatch batch = make_mlm_batch(sentences, vocab, cfg, mask_rng, pick.tagged);
    if (batch.masked_count == 0) ++result.zero_mask_batches;

    if (cfg.resample_per_epoch) {
      const int64_t epoch = static_cast<int64_t>(step - 1) * cfg.batch_size /
                            static_cast<int64_t>(untagged.records.size());
      for (size_t b = 0; b < batch.records.size(); ++b) {
        const SentenceRecord& rec = *batch.records[b];
        Rng srng(stream_hash(cfg.seed, "resample-" + rec.sentence.raw.sent_id,
                             static_cast<uint64_t>(epoch)));
        batch.samples.phrases[b] = sample_phrases(rec.sentence, srng, untagged.params.k_neg,
                                                  untagged.params.sets_per_sentence);
        batch.samples.trees[b] = sample_trees(rec.sentence, srng, untagged.params.max_tokens,
                                              untagged.params.sets_per_sentence);
      }
    }

    Rng dropout_rng(stream_hash(cfg.seed, "dropout", static_cast<uint64_t>(step)));
    Tape<float> tape;
    StepEval<float> ev = evaluate_step(tape, model, batch, variant, /*train_mode=*/true, &dropout_rng);

    for (const auto& [name, value] : ev.components) {
      if (!std::isfinite(value)) {
        std::string ids;
        for (const auto& sid : batch.sent_ids) ids += (ids.empty() ? "" : ",") + sid;
        throw TrainAbort("non-finite " + name + " loss at step " + std::to_string(step) +
                         " (batch sentences: " + ids + ")");
      }
    }
    if (result.steps_run == 0 && start_step == 0) result.initial_mlm = ev.components["mlm"];
    result.final_mlm = ev.components["mlm"];

    tape.backward(ev.total);

    const double norm = global_grad_norm(ev.fo.param_nodes);
    const double clip_scale = norm > cfg.clip_norm ? cfg.clip_norm / norm : 1.0;

    opt.t += 1;
    const double lr_t = cfg.lr * (step <= warmup_steps
                                      ? static_cast<double>(step) / warmup_steps
                                      : 1.0);
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(opt.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(opt.t));
    for (const auto& [name, node] : ev.fo.param_nodes) {
      const Array<float>& g = node.grad();
      if (g.empty()) continue;
      const size_t pi = param_index.at(name);
      Array<float>& p = model.params[pi].second;
      Array<float>& m = opt.m[pi];
      Array<float>& v = opt.v[pi];
      for (int64_t i = 0; i < p.numel(); ++i) {
        const double gi = static_cast<double>(g[i]) * clip_scale;
        m[i] = static_cast<float>(cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi);
        v[i] = static_cast<float>(cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi);
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p[i] = static_cast<float>(p[i] - lr_t * mhat / (std::sqrt(vhat) + cfg.adam_eps));
      }
    }

    json rec{{"step", step},
             {"tagged", pick.tagged},
             {"lr", lr_t},
             {"masked_positions", ev.masked_positions},
             {"grad_norm", norm},
             {"grad_norm_clipped", norm * clip_scale}};
    for (const auto& [name, value] : ev.components) rec["loss_" + name] = value;
    if (variant.phrase) rec["phrase_samples"] = ev.phrase_samples;
    if (variant.tree) {
      rec["tree_samples"] = ev.tree_samples;
      rec["skipped_tree_samples"] = ev.skipped_tree_samples;
    }
    if (variant.sla) rec["gate_mean"] = ev.gate_mean;
    metrics << rec.dump() << "\n";
    metrics.flush();

    ++result.steps_run;
    if (cfg.checkpoint_interval > 0 && step % cfg.checkpoint_interval == 0 && step != cfg.steps)
      write_checkpoint(static_cast<uint64_t>(step), "checkpoint-" + std::to_string(step) + ".bin");
  }

  result.final_checkpoint = write_checkpoint(static_cast<uint64_t>(cfg.steps), "checkpoint-final.bin");
  return result;
}

}  // namespace treelm
