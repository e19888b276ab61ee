#include "treelm/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "treelm/synth.hpp"

namespace treelm {

GradCheckReport run_gradcheck(const GradCheckOptions& options) {
  const auto variant_opt = Variant::parse(options.cfg.variant);
  if (!variant_opt) throw std::invalid_argument("gradcheck: unknown variant " + options.cfg.variant);
  const Variant variant = *variant_opt;

  // Self-contained probe data.
  SynthOptions synth;
  synth.num_sentences = 32;
  synth.seed = options.cfg.seed;
  const std::vector<RawSentence> sentences = generate_sentences(synth);
  const Vocabulary vocab = build_vocab(sentences, 512);

  ModelConfig mc = options.cfg.model;
  mc.vocab = vocab.size();
  mc.sla_enabled = variant.sla;
  mc.precision = 64;

  PreprocessParams pp;
  pp.seed = options.cfg.seed;
  pp.delta = mc.delta;
  pp.k_neg = 3;
  pp.sets_per_sentence = 2;
  pp.max_tokens = 10;
  pp.max_len = mc.max_len;
  const CorpusArtifact artifact = preprocess_corpus(sentences, vocab, pp);

  // Prefer sentences that carry both sample kinds so the contrastive
  // paths are actually exercised.
  std::vector<const SentenceRecord*> picked;
  for (const auto& rec : artifact.records) {
    if (static_cast<int>(picked.size()) >= options.batch_sentences) break;
    if (!rec.phrases.empty() && !rec.trees.empty()) picked.push_back(&rec);
  }
  for (const auto& rec : artifact.records) {
    if (static_cast<int>(picked.size()) >= options.batch_sentences) break;
    if (std::find(picked.begin(), picked.end(), &rec) == picked.end()) picked.push_back(&rec);
  }
  if (picked.empty()) throw std::runtime_error("gradcheck: no usable sentences");

  TrainConfig cfg = options.cfg;
  cfg.model = mc;
  Rng mask_rng(stream_hash(cfg.seed, "gradcheck-mask"));
  MlmBatch batch = make_mlm_batch(picked, vocab, cfg, mask_rng, /*tagged=*/true);
  if (batch.masked_count == 0)
    throw std::runtime_error("gradcheck: probe batch selected no masked positions; raise mask_rate");

  EncoderModel<double> model = EncoderModel<double>::init(mc, cfg.seed);

  auto loss_value = [&]() {
    Tape<double> tape;
    MlmBatch b = batch;  // evaluate_step records sims into the batch
    StepEval<double> ev = evaluate_step(tape, model, b, variant, /*train_mode=*/false, nullptr);
    return static_cast<double>(ev.total.value()[0]);
  };

  GradCheckReport report;
  report.threshold = options.threshold;

  // Analytic gradients.
  std::map<std::string, Array<double>> analytic;
  {
    Tape<double> tape;
    MlmBatch b = batch;
    StepEval<double> ev = evaluate_step(tape, model, b, variant, false, nullptr);
    report.phrase_samples = ev.phrase_samples;
    report.tree_samples = ev.tree_samples;
    if (variant.phrase && ev.phrase_samples == 0)
      throw std::runtime_error("gradcheck: phrase loss active but no phrase samples in batch");
    if (variant.tree && ev.tree_samples == 0)
      throw std::runtime_error("gradcheck: tree loss active but no tree samples in batch");
    tape.backward(ev.total);
    for (const auto& [name, node] : ev.fo.param_nodes) {
      Array<double> g = node.grad();
      if (g.empty()) g = Array<double>(node.value().shape);
      analytic[name] = std::move(g);
    }
  }
  if (options.inject_error) {
    auto it = analytic.find("layer0.attn.wq");
    if (it == analytic.end()) it = analytic.begin();
    it->second[0] += 1.0;
  }

  for (auto& [name, param] : model.params) {
    GradCheckGroup group;
    group.name = name;
    const Array<double>& a = analytic.at(name);
    for (int64_t i = 0; i < param.numel(); ++i) {
      // fourth-order central stencil: the contrastive paths are steep
      // enough at random init that the plain two-point formula's eps^2
      // truncation term alone can reach ~1e-4 relative error
      const double old = param[i];
      param[i] = old + options.eps;
      const double p1 = loss_value();
      param[i] = old - options.eps;
      const double m1 = loss_value();
      param[i] = old + 2.0 * options.eps;
      const double p2 = loss_value();
      param[i] = old - 2.0 * options.eps;
      const double m2 = loss_value();
      param[i] = old;
      const double numeric = (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * options.eps);
      const double abs_err = std::abs(a[i] - numeric);
      const double rel_err = abs_err / std::max({std::abs(a[i]), std::abs(numeric), 1e-4});
      group.max_abs_err = std::max(group.max_abs_err, abs_err);
      if (rel_err > group.max_rel_err) group.max_rel_err = rel_err;
      if (rel_err > report.worst_rel_err) {
        report.worst_rel_err = rel_err;
        report.worst_param = name + "[" + std::to_string(i) + "]";
      }
      ++group.checked;
    }
    report.groups.push_back(std::move(group));
  }
  report.passed = report.worst_rel_err < options.threshold;
  return report;
}

}  // namespace treelm
