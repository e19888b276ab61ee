// treelm command-line driver: build-vocab, preprocess, pretrain,
// gradcheck, inspect-masks, eval-pos.
//
// Exit codes: 0 success, 1 verification or runtime failure, 2 usage or
// configuration error. Errors print a single "error: ..." line on stderr.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "treelm/artifact.hpp"
#include "treelm/gradcheck.hpp"
#include "treelm/synth.hpp"
#include "treelm/train.hpp"

namespace {

using namespace treelm;

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

int fail(int code, const std::string& message) {
  std::cerr << "error: " << message << "\n";
  return code;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::vector<RawSentence> read_conllu_inputs(const std::vector<std::string>& paths,
                                            std::vector<Diagnostic>& diagnostics) {
  std::vector<RawSentence> all;
  for (const auto& path : paths) {
    ConlluResult result = parse_conllu_file(path);
    for (auto& d : result.diagnostics) {
      d.message = path + ":" + std::to_string(d.line) + ": " + d.message;
      diagnostics.push_back(std::move(d));
    }
    for (auto& s : result.sentences) all.push_back(std::move(s));
  }
  return all;
}

// ---------------------------------------------------------------------------
// build-vocab
// ---------------------------------------------------------------------------

int cmd_build_vocab(const std::vector<std::string>& inputs, int size, const std::string& out) {
  std::vector<Diagnostic> diagnostics;
  std::vector<RawSentence> sentences;
  try {
    sentences = read_conllu_inputs(inputs, diagnostics);
  } catch (const std::exception& e) {
    return fail(kExitUsage, e.what());
  }
  for (const auto& d : diagnostics) std::cerr << d.message << "\n";

  Vocabulary vocab;
  try {
    vocab = build_vocab(sentences, size);
  } catch (const std::invalid_argument& e) {
    return fail(kExitUsage, e.what());
  }
  try {
    vocab.save(out);
  } catch (const std::exception& e) {
    return fail(kExitFailure, e.what());
  }

  long long tokens = 0, covered = 0;
  for (const auto& s : sentences)
    for (const auto& form : s.forms) {
      ++tokens;
      const auto ids = vocab.encode_word(form);
      if (std::find(ids.begin(), ids.end(), Vocabulary::kUnk) == ids.end()) ++covered;
    }
  std::cout << "pieces: " << vocab.size() << "\n";
  std::cout << "token coverage: " << covered << "/" << tokens;
  if (tokens > 0)
    std::cout << " (" << std::fixed << std::setprecision(2)
              << 100.0 * static_cast<double>(covered) / static_cast<double>(tokens) << "%)";
  std::cout << "\n";
  if (vocab.size() < size)
    std::cerr << "note: merge space exhausted at " << vocab.size() << " pieces (requested " << size
              << ")\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// preprocess
// ---------------------------------------------------------------------------

int cmd_preprocess(const std::string& input, const std::string& vocab_path,
                   const std::string& out, const PreprocessParams& params) {
  try {
    std::vector<Diagnostic> diagnostics;
    std::vector<RawSentence> sentences = read_conllu_inputs({input}, diagnostics);
    for (const auto& d : diagnostics) std::cerr << d.message << "\n";
    const Vocabulary vocab = Vocabulary::load(vocab_path);
    PreprocessStats stats;
    CorpusArtifact artifact = preprocess_corpus(sentences, vocab, params, &stats);
    for (const auto& d : stats.diagnostics) std::cerr << d.sent_id << ": " << d.message << "\n";
    save_artifact(artifact, out);
    std::cout << "sentences: " << stats.kept << " kept, "
              << static_cast<int>(diagnostics.size()) << " dropped at parse, "
              << stats.dropped_too_long << " dropped over max-len\n";
    int phrase_total = 0, tree_total = 0;
    for (const auto& rec : artifact.records) {
      phrase_total += static_cast<int>(rec.phrases.size());
      tree_total += static_cast<int>(rec.trees.size());
    }
    std::cout << "samples: " << phrase_total << " phrase, " << tree_total << " tree\n";
    return kExitOk;
  } catch (const std::invalid_argument& e) {
    return fail(kExitUsage, e.what());
  } catch (const std::exception& e) {
    return fail(kExitFailure, e.what());
  }
}

// ---------------------------------------------------------------------------
// pretrain
// ---------------------------------------------------------------------------

int cmd_pretrain(const std::string& config_path) {
  std::string text;
  try {
    text = read_file(config_path);
  } catch (const std::exception& e) {
    return fail(kExitUsage, e.what());
  }
  std::vector<std::string> errors;
  auto cfg_opt = TrainConfig::from_json_string(text, errors);
  if (cfg_opt) {
    // model.vocab == 0 means "take the size from the vocabulary file"
    if (cfg_opt->model.vocab == 0) {
      try {
        cfg_opt->model.vocab = Vocabulary::load(cfg_opt->paths.vocab_file).size();
      } catch (const std::exception& e) {
        errors.push_back(e.what());
      }
    }
    if (errors.empty())
      for (const auto& e : cfg_opt->validate()) errors.push_back(e);
  }
  if (!errors.empty()) {
    for (const auto& e : errors) std::cerr << "config: " << e << "\n";
    return fail(kExitUsage, "invalid config (" + std::to_string(errors.size()) + " problem(s))");
  }
  TrainConfig cfg = *cfg_opt;

  try {
    const Vocabulary vocab = Vocabulary::load(cfg.paths.vocab_file);
    if (vocab.size() != cfg.model.vocab)
      return fail(kExitUsage, "vocab file has " + std::to_string(vocab.size()) +
                                  " pieces but model.vocab is " + std::to_string(cfg.model.vocab));
    const CorpusArtifact untagged = load_artifact(cfg.paths.untagged_artifact);
    CorpusArtifact tagged;
    const bool use_tagged = !cfg.paths.tagged_artifact.empty();
    if (use_tagged) tagged = load_artifact(cfg.paths.tagged_artifact);

    EncoderModel<float> model;
    AdamState<float> opt;
    uint64_t start_step = 0;
    if (!cfg.paths.resume_from.empty()) {
      Checkpoint<float> ckpt = load_checkpoint<float>(cfg.paths.resume_from);
      std::vector<std::string> resume_errors;
      auto stored = TrainConfig::from_json_string(ckpt.config_json, resume_errors);
      if (!stored) return fail(kExitUsage, "resume checkpoint carries an unreadable config");
      if (stored->variant != cfg.variant || stored->seed != cfg.seed)
        return fail(kExitUsage, "resume checkpoint was trained with variant '" + stored->variant +
                                    "' seed " + std::to_string(stored->seed) +
                                    "; config asks for '" + cfg.variant + "' seed " +
                                    std::to_string(cfg.seed));
      model = EncoderModel<float>::init(cfg.model, cfg.seed);
      if (ckpt.params.size() != model.params.size())
        return fail(kExitUsage, "resume checkpoint parameter list does not match the model");
      for (size_t i = 0; i < model.params.size(); ++i) {
        if (ckpt.params[i].first != model.params[i].first ||
            ckpt.params[i].second.shape != model.params[i].second.shape)
          return fail(kExitUsage, "resume checkpoint parameter '" + ckpt.params[i].first +
                                      "' does not match the model");
        model.params[i].second = ckpt.params[i].second;
      }
      opt = AdamState<float>::init(model);
      if (ckpt.has_optimizer) {
        opt.t = ckpt.adam_t;
        opt.m = ckpt.adam_m;
        opt.v = ckpt.adam_v;
      }
      start_step = ckpt.step;
    } else {
      model = EncoderModel<float>::init(cfg.model, cfg.seed);
      opt = AdamState<float>::init(model);
    }
    std::cout << "variant " << cfg.variant << ", " << model.count_parameters() << " parameters\n";

    TrainResult result =
        train_loop(cfg, untagged, use_tagged ? &tagged : nullptr, vocab, model, opt, start_step);
    std::cout << "steps run: " << result.steps_run << "\n";
    if (result.steps_run > 0 && start_step == 0)
      std::cout << "mlm loss: " << result.initial_mlm << " -> " << result.final_mlm << "\n";
    if (result.zero_mask_batches > 0)
      std::cerr << "warning: " << result.zero_mask_batches << " batch(es) had no masked positions\n";
    std::cout << "final checkpoint: " << result.final_checkpoint << "\n";
    std::cout << "metrics: " << result.metrics_file << "\n";
    return kExitOk;
  } catch (const TrainAbort& e) {
    return fail(kExitFailure, e.what());
  } catch (const std::invalid_argument& e) {
    return fail(kExitUsage, e.what());
  } catch (const std::exception& e) {
    return fail(kExitFailure, e.what());
  }
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

int cmd_gradcheck(const std::string& config_path, int precision, bool inject_error) {
  std::string text;
  try {
    text = read_file(config_path);
  } catch (const std::exception& e) {
    return fail(kExitUsage, e.what());
  }
  std::vector<std::string> errors;
  auto cfg_opt = TrainConfig::from_json_string(text, errors);
  if (!cfg_opt) {
    for (const auto& e : errors) std::cerr << "config: " << e << "\n";
    return fail(kExitUsage, "invalid config");
  }
  if (precision != 64)
    return fail(kExitUsage, "gradcheck runs at 64-bit precision (--precision 64); float rounding "
                            "drowns the finite-difference signal");
  try {
    GradCheckOptions options;
    options.cfg = *cfg_opt;
    options.inject_error = inject_error;
    const GradCheckReport report = run_gradcheck(options);
    std::cout << "gradcheck variant=" << options.cfg.variant << " eps=" << options.eps
              << " threshold=" << report.threshold
              << " (4th-order central stencil; rel err = |a-n| / max(|a|,|n|,1e-4))\n";
    std::cout << "contrastive samples in probe batch: " << report.phrase_samples << " phrase, "
              << report.tree_samples << " tree\n";
    for (const auto& g : report.groups) {
      std::cout << "  " << std::left << std::setw(28) << g.name << " max rel err "
                << std::scientific << std::setprecision(3) << g.max_rel_err << "  (" << g.checked
                << " params)\n";
    }
    std::cout << "worst: " << report.worst_param << " rel err " << std::scientific
              << report.worst_rel_err << "\n";
    if (!report.passed)
      return fail(kExitFailure, "gradient check failed: " + report.worst_param + " rel err " +
                                    std::to_string(report.worst_rel_err) + " exceeds threshold");
    std::cout << "gradcheck passed\n";
    return kExitOk;
  } catch (const std::exception& e) {
    return fail(kExitFailure, e.what());
  }
}

// ---------------------------------------------------------------------------
// inspect-masks
// ---------------------------------------------------------------------------

void print_matrix(const std::string& title, int n, const std::function<std::string(int, int)>& cell) {
  std::cout << title << "\n    ";
  for (int j = 0; j < n; ++j) std::cout << std::setw(4) << j;
  std::cout << "\n";
  for (int i = 0; i < n; ++i) {
    std::cout << std::setw(4) << i;
    for (int j = 0; j < n; ++j) std::cout << std::setw(4) << cell(i, j);
    std::cout << "\n";
  }
}

int cmd_inspect_masks(const std::string& input, const std::string& vocab_path, int sentence_index,
                      const PreprocessParams& params) {
  try {
    std::vector<Diagnostic> diagnostics;
    std::vector<RawSentence> sentences = read_conllu_inputs({input}, diagnostics);
    for (const auto& d : diagnostics) std::cerr << d.message << "\n";
    const Vocabulary vocab = Vocabulary::load(vocab_path);
    PreprocessStats stats;
    CorpusArtifact artifact = preprocess_corpus(sentences, vocab, params, &stats);
    for (const auto& d : stats.diagnostics) std::cerr << d.sent_id << ": " << d.message << "\n";
    if (sentence_index < 0 || sentence_index >= static_cast<int>(artifact.records.size()))
      return fail(kExitUsage, "sentence index " + std::to_string(sentence_index) +
                                  " out of range (corpus has " +
                                  std::to_string(artifact.records.size()) + " sentences)");
    const SentenceRecord& rec = artifact.records[static_cast<size_t>(sentence_index)];
    const ParsedSentence& ps = rec.sentence;
    const int n = ps.num_subwords();

    std::cout << "sent_id: " << ps.raw.sent_id << "\n";
    std::cout << "words:";
    for (const auto& f : ps.raw.forms) std::cout << " " << f;
    std::cout << "\nsubwords:";
    for (int p = 0; p < n; ++p)
      std::cout << " " << p << ":" << vocab.piece(ps.subword_ids[static_cast<size_t>(p)]);
    std::cout << "\neffective heads (1-based, 0=root):";
    for (int h : ps.effective_heads) std::cout << " " << h;
    std::cout << "\n\n";

    print_matrix("D (tree distance):", n,
                 [&](int i, int j) { return std::to_string(rec.distances.at(i, j)); });
    std::cout << "\n";
    print_matrix("D' (windowed, min over source window i-1..i+1):", n,
                 [&](int i, int j) { return std::to_string(rec.mask.dprime_at(i, j)); });
    std::cout << "\n";
    print_matrix("M (delta=" + std::to_string(params.delta) + "; '.'=attend, 'X'=masked):", n,
                 [&](int i, int j) { return std::string(rec.mask.is_local(i, j) ? "." : "X"); });

    std::cout << "\nphrase samples (" << rec.phrases.size() << "):\n";
    for (const auto& s : rec.phrases) {
      std::cout << "  anchor=" << s.anchor << " positive=" << s.positive
                << " ancestor=" << s.ancestor << " negatives=[";
      for (size_t i = 0; i < s.negatives.size(); ++i)
        std::cout << (i ? "," : "") << s.negatives[i];
      std::cout << "]\n";
    }
    std::cout << "tree samples (" << rec.trees.size() << "):\n";
    for (const auto& s : rec.trees) {
      std::cout << "  root=" << s.root << " positive={";
      for (size_t i = 0; i < s.positive_tree.size(); ++i)
        std::cout << (i ? "," : "") << s.positive_tree[i];
      std::cout << "}\n";
      for (const auto& neg : s.negatives) {
        std::cout << "    negative: sub_root=" << neg.substituted_root << " removed=" << neg.removed
                  << " tokens={";
        for (size_t i = 0; i < neg.tokens.size(); ++i) std::cout << (i ? "," : "") << neg.tokens[i];
        std::cout << "}\n";
      }
    }
    return kExitOk;
  } catch (const std::invalid_argument& e) {
    return fail(kExitUsage, e.what());
  } catch (const std::exception& e) {
    return fail(kExitFailure, e.what());
  }
}

// ---------------------------------------------------------------------------
// eval-pos
// ---------------------------------------------------------------------------

int cmd_eval_pos(const std::string& checkpoint_path, const std::string& vocab_path,
                 const std::string& input) {
  try {
    const Checkpoint<float> ckpt = load_checkpoint<float>(checkpoint_path);
    std::vector<std::string> errors;
    auto cfg_opt = TrainConfig::from_json_string(ckpt.config_json, errors);
    if (!cfg_opt) return fail(kExitFailure, "checkpoint carries an unreadable config");
    const Vocabulary vocab = Vocabulary::load(vocab_path);
    if (vocab.size() != cfg_opt->model.vocab)
      return fail(kExitUsage, "checkpoint/vocab mismatch: model was trained with " +
                                  std::to_string(cfg_opt->model.vocab) + " pieces, vocab file has " +
                                  std::to_string(vocab.size()));

    EncoderModel<float> model = EncoderModel<float>::init(cfg_opt->model, cfg_opt->seed);
    if (ckpt.params.size() != model.params.size())
      return fail(kExitUsage, "checkpoint/model mismatch: parameter lists differ");
    for (size_t i = 0; i < model.params.size(); ++i) {
      if (ckpt.params[i].first != model.params[i].first ||
          ckpt.params[i].second.shape != model.params[i].second.shape)
        return fail(kExitUsage, "checkpoint/model mismatch at parameter " + ckpt.params[i].first);
      model.params[i].second = ckpt.params[i].second;
    }

    std::vector<Diagnostic> diagnostics;
    std::vector<RawSentence> sentences = read_conllu_inputs({input}, diagnostics);
    for (const auto& d : diagnostics) std::cerr << d.message << "\n";
    if (sentences.empty()) return fail(kExitUsage, "no usable sentences in " + input);

    long long correct = 0, total = 0;
    const int batch_size = 16;
    std::vector<ParsedSentence> parsed;
    for (const auto& s : sentences) {
      ParsedSentence ps = align(s, vocab);
      if (ps.num_subwords() > cfg_opt->model.max_len) {
        std::cerr << s.sent_id << ": skipped, longer than max_len\n";
        continue;
      }
      parsed.push_back(std::move(ps));
    }
    for (size_t start = 0; start < parsed.size(); start += batch_size) {
      const size_t end = std::min(parsed.size(), start + batch_size);
      ModelBatch<float> mb;
      mb.batch = static_cast<int>(end - start);
      mb.seq = 1;
      for (size_t i = start; i < end; ++i)
        mb.seq = std::max(mb.seq, parsed[i].num_subwords());
      mb.ids.assign(static_cast<size_t>(mb.batch) * mb.seq, Vocabulary::kPad);
      for (size_t i = start; i < end; ++i) {
        mb.lengths.push_back(parsed[i].num_subwords());
        for (int p = 0; p < parsed[i].num_subwords(); ++p)
          mb.ids[(i - start) * static_cast<size_t>(mb.seq) + static_cast<size_t>(p)] =
              parsed[i].subword_ids[static_cast<size_t>(p)];
      }
      mb.pad_mask = pad_mask_array<float>(mb.lengths, mb.seq);
      if (cfg_opt->model.sla_enabled) {
        // rebuild the local masks for this input
        std::vector<const SentenceRecord*> recs;
        std::vector<SentenceRecord> storage;
        storage.reserve(end - start);
        for (size_t i = start; i < end; ++i) {
          SentenceRecord rec;
          rec.sentence = parsed[i];
          rec.distances = tree_distances(parsed[i]);
          rec.mask = sla_mask(rec.distances, cfg_opt->model.delta);
          storage.push_back(std::move(rec));
        }
        for (const auto& r : storage) recs.push_back(&r);
        mb.local_mask = local_mask_array<float>(recs, mb.seq);
        mb.has_local = true;
      }

      Tape<float> tape;
      ForwardOutput<float> fo = forward(tape, model, mb, false, nullptr);
      const Array<float>& logits = fo.pos_logits.value();
      const int tagset = cfg_opt->model.tagset;
      for (size_t i = start; i < end; ++i) {
        const ParsedSentence& ps = parsed[i];
        for (int p = 0; p < ps.num_subwords(); ++p) {
          if (!ps.is_head_piece(p)) continue;
          const int w = ps.word_of_subword[static_cast<size_t>(p)];
          const int gold = upos_id(ps.raw.upos[static_cast<size_t>(w)]);
          const int64_t row = static_cast<int64_t>(i - start) * mb.seq + p;
          int best = 0;
          for (int t = 1; t < tagset; ++t)
            if (logits[row * tagset + t] > logits[row * tagset + best]) best = t;
          if (best == gold) ++correct;
          ++total;
        }
      }
    }
    if (total == 0) return fail(kExitFailure, "no evaluable tokens");
    std::cout << "tokens: " << total << "\n";
    std::cout << "correct: " << correct << "\n";
    std::cout << "accuracy: " << std::fixed << std::setprecision(6)
              << static_cast<double>(correct) / static_cast<double>(total) << "\n";
    return kExitOk;
  } catch (const std::invalid_argument& e) {
    return fail(kExitUsage, e.what());
  } catch (const std::exception& e) {
    return fail(kExitFailure, e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"syntax-aware encoder pretraining toolkit"};
  app.require_subcommand(1);

  // build-vocab
  auto* sc_vocab = app.add_subcommand("build-vocab", "learn a subword vocabulary from CoNLL-U");
  std::vector<std::string> bv_inputs;
  int bv_size = 8000;
  std::string bv_out;
  sc_vocab->add_option("--input", bv_inputs, "CoNLL-U input file(s)")->required();
  sc_vocab->add_option("--size", bv_size, "target piece count (specials included)")->required();
  sc_vocab->add_option("--out", bv_out, "output vocabulary file")->required();

  // preprocess
  auto* sc_pre = app.add_subcommand("preprocess", "tokenize, build masks and contrastive samples");
  std::string pre_input, pre_vocab, pre_out;
  PreprocessParams pre_params;
  sc_pre->add_option("--input", pre_input, "CoNLL-U input file")->required();
  sc_pre->add_option("--vocab", pre_vocab, "vocabulary file")->required();
  sc_pre->add_option("--out", pre_out, "output artifact file (JSONL)")->required();
  sc_pre->add_option("--delta", pre_params.delta, "locality threshold for the attention mask");
  sc_pre->add_option("--seed", pre_params.seed, "sampler seed");
  sc_pre->add_option("--k-neg", pre_params.k_neg, "negatives per phrase sample");
  sc_pre->add_option("--sets-per-sentence", pre_params.sets_per_sentence, "sample sets per sentence");
  sc_pre->add_option("--max-tokens", pre_params.max_tokens, "max tokens in a sampled subtree");
  sc_pre->add_option("--max-len", pre_params.max_len, "drop sentences over this many subwords");

  // pretrain
  auto* sc_train = app.add_subcommand("pretrain", "run the pretraining loop from a config file");
  std::string train_config;
  sc_train->add_option("--config", train_config, "JSON config file")->required();

  // gradcheck
  auto* sc_grad = app.add_subcommand(
      "gradcheck", "verify analytic gradients against central finite differences (64-bit)");
  std::string grad_config;
  int grad_precision = 64;
  bool grad_inject = false;
  sc_grad->add_option("--config", grad_config, "JSON config file (variant + model sizes)")->required();
  sc_grad->add_option("--precision", grad_precision, "floating-point width; only 64 is supported");
  sc_grad->add_flag("--inject-grad-error", grad_inject, "")->group("");  // test hook, hidden

  // inspect-masks
  auto* sc_inspect = app.add_subcommand("inspect-masks", "dump D, D', M and samples for a sentence");
  std::string ins_input, ins_vocab;
  int ins_sentence = 0;
  PreprocessParams ins_params;
  sc_inspect->add_option("--input", ins_input, "CoNLL-U input file")->required();
  sc_inspect->add_option("--vocab", ins_vocab, "vocabulary file")->required();
  sc_inspect->add_option("--sentence", ins_sentence, "sentence index (after drops)");
  sc_inspect->add_option("--delta", ins_params.delta, "locality threshold");
  sc_inspect->add_option("--seed", ins_params.seed, "sampler seed");
  sc_inspect->add_option("--k-neg", ins_params.k_neg, "negatives per phrase sample");
  sc_inspect->add_option("--sets-per-sentence", ins_params.sets_per_sentence, "sample sets per sentence");
  sc_inspect->add_option("--max-tokens", ins_params.max_tokens, "max tokens in a sampled subtree");
  sc_inspect->add_option("--max-len", ins_params.max_len, "drop sentences over this many subwords");

  // eval-pos
  auto* sc_eval = app.add_subcommand("eval-pos", "PoS accuracy of a checkpoint on gold-tagged input");
  std::string eval_ckpt, eval_vocab, eval_input;
  sc_eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  sc_eval->add_option("--vocab", eval_vocab, "vocabulary file")->required();
  sc_eval->add_option("--input", eval_input, "gold-tagged CoNLL-U file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // --help exits 0
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  if (sc_vocab->parsed()) return cmd_build_vocab(bv_inputs, bv_size, bv_out);
  if (sc_pre->parsed()) return cmd_preprocess(pre_input, pre_vocab, pre_out, pre_params);
  if (sc_train->parsed()) return cmd_pretrain(train_config);
  if (sc_grad->parsed()) return cmd_gradcheck(grad_config, grad_precision, grad_inject);
  if (sc_inspect->parsed()) return cmd_inspect_masks(ins_input, ins_vocab, ins_sentence, ins_params);
  if (sc_eval->parsed()) return cmd_eval_pos(eval_ckpt, eval_vocab, eval_input);
  return fail(kExitUsage, "no subcommand given");
}
