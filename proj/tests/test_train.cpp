#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "treelm/synth.hpp"
#include "treelm/train.hpp"

using namespace treelm;
using nlohmann::json;

namespace {

namespace fs = std::filesystem;

struct Fixture {
  std::vector<RawSentence> sentences;
  Vocabulary vocab;
  CorpusArtifact artifact;

  explicit Fixture(int n_sentences, uint64_t seed, int vocab_size = 128) {
    SynthOptions opt;
    opt.num_sentences = n_sentences;
    opt.seed = seed;
    sentences = generate_sentences(opt);
    vocab = build_vocab(sentences, vocab_size);
    PreprocessParams pp;
    pp.seed = seed;
    artifact = preprocess_corpus(sentences, vocab, pp);
  }

  std::vector<const SentenceRecord*> records(size_t count) const {
    std::vector<const SentenceRecord*> out;
    for (size_t i = 0; i < count && i < artifact.records.size(); ++i)
      out.push_back(&artifact.records[i]);
    return out;
  }
};

TrainConfig tiny_train_config(const Fixture& fx, const std::string& variant, const fs::path& out) {
  TrainConfig cfg;
  cfg.variant = variant;
  cfg.seed = 42;
  cfg.batch_size = 4;
  cfg.steps = 5;
  cfg.lr = 1e-3;
  cfg.model.layers = 1;
  cfg.model.hidden = 16;
  cfg.model.heads = 2;
  cfg.model.ffn = 24;
  cfg.model.vocab = fx.vocab.size();
  cfg.model.max_len = 48;
  cfg.model.dropout = 0.1;
  cfg.model.sla_enabled = Variant::parse(variant)->sla;
  cfg.paths.untagged_artifact = "unused.jsonl";
  cfg.paths.tagged_artifact = Variant::parse(variant)->pos_task ? "unused_tagged.jsonl" : "";
  cfg.paths.vocab_file = "unused.vocab";
  cfg.paths.out_dir = out.string();
  return cfg;
}

std::vector<json> read_metrics(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::vector<json> lines;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) lines.push_back(json::parse(line));
  return lines;
}

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

TEST_CASE("masking rate 0 leaves the batch untouched") {
  Fixture fx(8, 100);
  TrainConfig cfg;
  cfg.mask_rate = 0.0;
  cfg.model.vocab = fx.vocab.size();
  Rng rng(1);
  MlmBatch batch = make_mlm_batch(fx.records(4), fx.vocab, cfg, rng, false);
  CHECK(batch.masked_count == 0);
  for (int b = 0; b < batch.batch; ++b)
    for (int p = 0; p < batch.lengths[static_cast<size_t>(b)]; ++p) {
      const int64_t flat = static_cast<int64_t>(b) * batch.seq + p;
      CHECK(batch.input_ids[static_cast<size_t>(flat)] ==
            batch.records[static_cast<size_t>(b)]->sentence.subword_ids[static_cast<size_t>(p)]);
      CHECK(batch.mlm_targets[static_cast<size_t>(flat)] == -1);
    }
}

TEST_CASE("masking rate 1 with a pure-mask split masks every real position") {
  Fixture fx(8, 101);
  TrainConfig cfg;
  cfg.mask_rate = 1.0;
  cfg.mask_to_mask = 1.0;
  cfg.mask_to_random = 0.0;
  cfg.mask_to_keep = 0.0;
  Rng rng(2);
  MlmBatch batch = make_mlm_batch(fx.records(4), fx.vocab, cfg, rng, false);
  int real_positions = 0;
  for (int b = 0; b < batch.batch; ++b) real_positions += batch.lengths[static_cast<size_t>(b)];
  CHECK(batch.masked_count == real_positions);
  for (int b = 0; b < batch.batch; ++b)
    for (int p = 0; p < batch.lengths[static_cast<size_t>(b)]; ++p) {
      const int64_t flat = static_cast<int64_t>(b) * batch.seq + p;
      CHECK(batch.input_ids[static_cast<size_t>(flat)] == Vocabulary::kMask);
      CHECK(batch.mlm_targets[static_cast<size_t>(flat)] ==
            batch.records[static_cast<size_t>(b)]->sentence.subword_ids[static_cast<size_t>(p)]);
    }
}

TEST_CASE("masking statistics match the configured categorical distribution") {
  Fixture fx(1500, 102);
  TrainConfig cfg;
  Rng rng(3);
  long long selected = 0, to_mask = 0, to_keep = 0, to_random = 0, positions = 0;
  const size_t stride = 16;
  for (size_t start = 0; start + stride <= fx.artifact.records.size(); start += stride) {
    std::vector<const SentenceRecord*> recs;
    for (size_t i = start; i < start + stride; ++i) recs.push_back(&fx.artifact.records[i]);
    MlmBatch batch = make_mlm_batch(recs, fx.vocab, cfg, rng, false);
    for (int b = 0; b < batch.batch; ++b)
      for (int p = 0; p < batch.lengths[static_cast<size_t>(b)]; ++p) {
        ++positions;
        const int64_t flat = static_cast<int64_t>(b) * batch.seq + p;
        if (batch.mlm_targets[static_cast<size_t>(flat)] < 0) continue;
        ++selected;
        const int in = batch.input_ids[static_cast<size_t>(flat)];
        const int orig = batch.mlm_targets[static_cast<size_t>(flat)];
        if (in == Vocabulary::kMask) ++to_mask;
        else if (in == orig) ++to_keep;
        else ++to_random;
      }
  }
  REQUIRE(positions > 10000);
  const double sel_frac = static_cast<double>(selected) / static_cast<double>(positions);
  CHECK(sel_frac > 0.14);
  CHECK(sel_frac < 0.16);
  const double d = static_cast<double>(selected);
  CHECK(std::abs(to_mask / d - 0.8) < 0.02);
  CHECK(std::abs(to_random / d - 0.1) < 0.02);
  CHECK(std::abs(to_keep / d - 0.1) < 0.02);
}

TEST_CASE("pos targets only appear on head pieces of tagged batches") {
  Fixture fx(8, 103, 64);  // small vocab forces multi-piece words
  TrainConfig cfg;
  Rng rng(4);
  MlmBatch tagged = make_mlm_batch(fx.records(4), fx.vocab, cfg, rng, true);
  bool saw_target = false, saw_continuation = false;
  for (int b = 0; b < tagged.batch; ++b) {
    const ParsedSentence& s = tagged.records[static_cast<size_t>(b)]->sentence;
    for (int p = 0; p < s.num_subwords(); ++p) {
      const int64_t flat = static_cast<int64_t>(b) * tagged.seq + p;
      const int t = tagged.pos_targets[static_cast<size_t>(flat)];
      if (s.is_head_piece(p)) {
        CHECK(t == upos_id(s.raw.upos[static_cast<size_t>(s.word_of_subword[static_cast<size_t>(p)])]));
        saw_target = true;
      } else {
        CHECK(t == -1);
        saw_continuation = true;
      }
    }
  }
  CHECK(saw_target);
  CHECK(saw_continuation);
}

TEST_CASE("scheduler: 900 batches at 1:8 contain exactly 100 tagged, one per window") {
  MixingScheduler sched(50, 10, 4, 8, true, 77);
  int tagged = 0;
  for (int w = 0; w < 100; ++w) {
    int in_window = 0;
    for (int o = 1; o <= 9; ++o)
      if (sched.pick(w * 9 + o).tagged) {
        ++tagged;
        ++in_window;
      }
    CHECK(in_window == 1);
  }
  CHECK(tagged == 100);
}

TEST_CASE("scheduler passes the untagged stream through for plain variants") {
  MixingScheduler sched(20, 0, 4, 8, false, 5);
  std::set<int> seen;
  for (int step = 1; step <= 5; ++step) {
    const auto pick = sched.pick(step);
    CHECK(!pick.tagged);
    CHECK(pick.indices.size() == 4);
    for (int i : pick.indices) seen.insert(i);
  }
  CHECK(seen.size() == 20);  // first epoch covers every sentence exactly once
}

TEST_CASE("scheduler is deterministic and stateless in the step index") {
  MixingScheduler a(30, 6, 4, 8, true, 123);
  MixingScheduler b(30, 6, 4, 8, true, 123);
  // query b out of order; picks must still match a's
  for (int step : {17, 3, 25, 1, 17, 9}) {
    const auto pa = a.pick(step);
    const auto pb = b.pick(step);
    CHECK(pa.tagged == pb.tagged);
    CHECK(pa.indices == pb.indices);
  }
}

TEST_CASE("scheduler demands tagged data only when the variant needs it") {
  CHECK_THROWS_AS(MixingScheduler(10, 0, 4, 8, true, 1), std::invalid_argument);
  CHECK_NOTHROW(MixingScheduler(10, 0, 4, 8, false, 1));
}

TEST_CASE("train config json round-trip is strict about unknown keys") {
  TrainConfig cfg;
  cfg.variant = "mpt";
  cfg.model.sla_enabled = false;
  std::vector<std::string> errors;
  auto parsed = TrainConfig::from_json_string(cfg.to_json_string(), errors);
  REQUIRE(parsed.has_value());
  CHECK(errors.empty());
  CHECK(parsed->variant == "mpt");

  errors.clear();
  auto bad = TrainConfig::from_json_string(R"({"steps": 5, "nonsense_key": 1})", errors);
  CHECK(!bad.has_value());
  REQUIRE(errors.size() == 1);
  CHECK(errors[0].find("nonsense_key") != std::string::npos);

  errors.clear();
  auto bad2 = TrainConfig::from_json_string(R"({"model": {"hidden": "wide"}})", errors);
  CHECK(!bad2.has_value());
  CHECK(errors[0].find("hidden") != std::string::npos);
}

TEST_CASE("train config validation lists every problem") {
  TrainConfig cfg;
  cfg.variant = "nope";
  cfg.batch_size = 0;
  cfg.tau = 2.0;
  cfg.mask_to_keep = 0.3;  // split no longer sums to 1
  cfg.paths = {};
  const auto errors = cfg.validate();
  CHECK(errors.size() >= 5);
}

TEST_CASE("zero-step training writes a checkpoint equal to initialization") {
  Fixture fx(12, 104);
  const fs::path out = "train_test_zero_steps";
  fs::remove_all(out);
  TrainConfig cfg = tiny_train_config(fx, "m", out);
  cfg.steps = 0;
  EncoderModel<float> model = EncoderModel<float>::init(cfg.model, cfg.seed);
  const EncoderModel<float> reference = model;
  AdamState<float> opt = AdamState<float>::init(model);
  TrainResult result = train_loop(cfg, fx.artifact, nullptr, fx.vocab, model, opt);
  CHECK(result.steps_run == 0);

  Checkpoint<float> ckpt = load_checkpoint<float>(result.final_checkpoint);
  CHECK(ckpt.step == 0);
  REQUIRE(ckpt.params.size() == reference.params.size());
  for (size_t i = 0; i < ckpt.params.size(); ++i) {
    const auto& a = ckpt.params[i].second.data;
    const auto& b = reference.params[i].second.data;
    REQUIRE(a.size() == b.size());
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
  }
  fs::remove_all(out);
}

TEST_CASE("identical config and seed give bit-identical checkpoints and metrics") {
  Fixture fx(12, 105);
  const fs::path out_a = "train_test_repeat_a";
  const fs::path out_b = "train_test_repeat_b";
  fs::remove_all(out_a);
  fs::remove_all(out_b);
  std::string ckpt_a, ckpt_b;
  for (int run = 0; run < 2; ++run) {
    TrainConfig cfg = tiny_train_config(fx, "mpt-sla", run == 0 ? out_a : out_b);
    EncoderModel<float> model = EncoderModel<float>::init(cfg.model, cfg.seed);
    AdamState<float> opt = AdamState<float>::init(model);
    TrainResult r = train_loop(cfg, fx.artifact, nullptr, fx.vocab, model, opt);
    (run == 0 ? ckpt_a : ckpt_b) = r.final_checkpoint;
  }
  // checkpoints embed the config (identical except out_dir), so compare
  // the parameter payloads instead of raw bytes
  Checkpoint<float> a = load_checkpoint<float>(ckpt_a);
  Checkpoint<float> b = load_checkpoint<float>(ckpt_b);
  REQUIRE(a.params.size() == b.params.size());
  for (size_t i = 0; i < a.params.size(); ++i)
    CHECK(std::memcmp(a.params[i].second.data.data(), b.params[i].second.data.data(),
                      a.params[i].second.data.size() * sizeof(float)) == 0);
  for (size_t i = 0; i < a.adam_m.size(); ++i) {
    CHECK(std::memcmp(a.adam_m[i].data.data(), b.adam_m[i].data.data(),
                      a.adam_m[i].data.size() * sizeof(float)) == 0);
    CHECK(std::memcmp(a.adam_v[i].data.data(), b.adam_v[i].data.data(),
                      a.adam_v[i].data.size() * sizeof(float)) == 0);
  }
  const auto ma = read_metrics((out_a / "metrics.jsonl").string());
  const auto mb = read_metrics((out_b / "metrics.jsonl").string());
  REQUIRE(ma.size() == mb.size());
  for (size_t i = 0; i < ma.size(); ++i) CHECK(ma[i] == mb[i]);
  fs::remove_all(out_a);
  fs::remove_all(out_b);
}

TEST_CASE("metrics log: total equals the sum of components; clipping is exact") {
  Fixture fx(12, 106);
  const fs::path out = "train_test_metrics";
  fs::remove_all(out);
  TrainConfig cfg = tiny_train_config(fx, "mpt", out);
  cfg.steps = 6;
  cfg.clip_norm = 0.05;  // low enough to trigger on every step
  EncoderModel<float> model = EncoderModel<float>::init(cfg.model, cfg.seed);
  AdamState<float> opt = AdamState<float>::init(model);
  train_loop(cfg, fx.artifact, nullptr, fx.vocab, model, opt);

  const auto metrics = read_metrics((out / "metrics.jsonl").string());
  REQUIRE(metrics.size() == 6);
  for (const auto& rec : metrics) {
    const double total = rec.at("loss_total").get<double>();
    const double sum = rec.at("loss_mlm").get<double>() + rec.at("loss_phrase").get<double>() +
                       rec.at("loss_tree").get<double>();
    CHECK(std::abs(total - sum) < 1e-6);
    const double raw = rec.at("grad_norm").get<double>();
    const double clipped = rec.at("grad_norm_clipped").get<double>();
    CHECK(clipped <= cfg.clip_norm * (1 + 1e-9));
    if (raw > cfg.clip_norm) CHECK(clipped == doctest::Approx(cfg.clip_norm).epsilon(1e-9));
  }
  fs::remove_all(out);
}

TEST_CASE("sla runs log a mean gate value") {
  Fixture fx(12, 107);
  const fs::path out = "train_test_gate";
  fs::remove_all(out);
  TrainConfig cfg = tiny_train_config(fx, "mpt-sla", out);
  cfg.steps = 2;
  EncoderModel<float> model = EncoderModel<float>::init(cfg.model, cfg.seed);
  AdamState<float> opt = AdamState<float>::init(model);
  train_loop(cfg, fx.artifact, nullptr, fx.vocab, model, opt);
  const auto metrics = read_metrics((out / "metrics.jsonl").string());
  for (const auto& rec : metrics) {
    const double g = rec.at("gate_mean").get<double>();
    CHECK(g > 0.0);
    CHECK(g < 1.0);
  }
  fs::remove_all(out);
}

TEST_CASE("resuming from a checkpoint reproduces the uninterrupted run") {
  Fixture fx(12, 108);
  const fs::path out_full = "train_test_resume_full";
  const fs::path out_resume = "train_test_resume_part";
  fs::remove_all(out_full);
  fs::remove_all(out_resume);

  TrainConfig cfg_full = tiny_train_config(fx, "mp", out_full);
  cfg_full.steps = 6;
  cfg_full.checkpoint_interval = 3;
  EncoderModel<float> m_full = EncoderModel<float>::init(cfg_full.model, cfg_full.seed);
  AdamState<float> opt_full = AdamState<float>::init(m_full);
  TrainResult full = train_loop(cfg_full, fx.artifact, nullptr, fx.vocab, m_full, opt_full);

  // restart from the step-3 snapshot in a fresh directory
  Checkpoint<float> snap = load_checkpoint<float>((out_full / "checkpoint-3.bin").string());
  TrainConfig cfg_resume = cfg_full;
  cfg_resume.paths.out_dir = out_resume.string();
  EncoderModel<float> m_resume = EncoderModel<float>::init(cfg_resume.model, cfg_resume.seed);
  for (size_t i = 0; i < m_resume.params.size(); ++i)
    m_resume.params[i].second = snap.params[i].second;
  AdamState<float> opt_resume = AdamState<float>::init(m_resume);
  opt_resume.t = snap.adam_t;
  opt_resume.m = snap.adam_m;
  opt_resume.v = snap.adam_v;
  TrainResult resumed =
      train_loop(cfg_resume, fx.artifact, nullptr, fx.vocab, m_resume, opt_resume, snap.step);
  CHECK(resumed.steps_run == 3);

  const auto metrics_full = read_metrics(full.metrics_file);
  const auto metrics_resumed = read_metrics(resumed.metrics_file);
  REQUIRE(metrics_full.size() == 6);
  REQUIRE(metrics_resumed.size() == 3);
  // step 4 of the resumed run matches step 4 of the uninterrupted run
  for (size_t i = 0; i < 3; ++i) CHECK(metrics_resumed[i] == metrics_full[i + 3]);

  Checkpoint<float> ck_full = load_checkpoint<float>(full.final_checkpoint);
  Checkpoint<float> ck_resumed = load_checkpoint<float>(resumed.final_checkpoint);
  for (size_t i = 0; i < ck_full.params.size(); ++i)
    CHECK(std::memcmp(ck_full.params[i].second.data.data(),
                      ck_resumed.params[i].second.data.data(),
                      ck_full.params[i].second.data.size() * sizeof(float)) == 0);
  fs::remove_all(out_full);
  fs::remove_all(out_resume);
}

TEST_CASE("non-finite losses abort with the offending batch named") {
  Fixture fx(12, 109);
  const fs::path out = "train_test_nan";
  fs::remove_all(out);
  TrainConfig cfg = tiny_train_config(fx, "m", out);
  EncoderModel<float> model = EncoderModel<float>::init(cfg.model, cfg.seed);
  (*model.find("embeddings.token"))[0] = std::numeric_limits<float>::quiet_NaN();
  AdamState<float> opt = AdamState<float>::init(model);
  try {
    train_loop(cfg, fx.artifact, nullptr, fx.vocab, model, opt);
    FAIL("expected TrainAbort");
  } catch (const TrainAbort& e) {
    const std::string msg = e.what();
    CHECK(msg.find("non-finite") != std::string::npos);
    CHECK(msg.find("synth-") != std::string::npos);  // batch sentence ids
  }
  fs::remove_all(out);
}

TEST_CASE("x-variants refuse to run without tagged data") {
  Fixture fx(12, 110);
  const fs::path out = "train_test_notags";
  TrainConfig cfg = tiny_train_config(fx, "mx", out);
  EncoderModel<float> model = EncoderModel<float>::init(cfg.model, cfg.seed);
  AdamState<float> opt = AdamState<float>::init(model);
  CHECK_THROWS_WITH_AS(train_loop(cfg, fx.artifact, nullptr, fx.vocab, model, opt),
                       doctest::Contains("tagged"), std::invalid_argument);
}

TEST_CASE("corpus artifact file round-trips byte-identically") {
  Fixture fx(10, 111);
  const std::string text = artifact_to_jsonl(fx.artifact);
  CorpusArtifact reloaded = artifact_from_jsonl(text);
  CHECK(artifact_to_jsonl(reloaded) == text);
  REQUIRE(reloaded.records.size() == fx.artifact.records.size());
  for (size_t i = 0; i < reloaded.records.size(); ++i) {
    CHECK(reloaded.records[i].sentence.subword_ids == fx.artifact.records[i].sentence.subword_ids);
    CHECK(reloaded.records[i].sentence.effective_heads ==
          fx.artifact.records[i].sentence.effective_heads);
    CHECK(reloaded.records[i].distances.d == fx.artifact.records[i].distances.d);
    CHECK(reloaded.records[i].mask.local == fx.artifact.records[i].mask.local);
  }
}

TEST_CASE("the synthetic corpus is deterministic and well-formed") {
  SynthOptions opt;
  opt.num_sentences = 50;
  opt.seed = 9;
  const auto a = generate_sentences(opt);
  const auto b = generate_sentences(opt);
  REQUIRE(a.size() == 50);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].forms == b[i].forms);
    CHECK(a[i].heads == b[i].heads);
    CHECK(!tree_violation(a[i].heads).has_value());
    CHECK(a[i].size() >= 3);
  }
  // word-order regularities: determiners precede their head noun
  for (const auto& s : a)
    for (int i = 0; i < s.size(); ++i)
      if (s.upos[static_cast<size_t>(i)] == "DET")
        CHECK(i + 1 < s.heads[static_cast<size_t>(i)]);
}
