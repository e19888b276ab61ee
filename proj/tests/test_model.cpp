#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "treelm/checkpoint.hpp"
#include "treelm/model.hpp"
#include "treelm/train.hpp"

using namespace treelm;

namespace {

ParsedSentence sentence_from_heads(const std::vector<int>& heads, int vocab_size) {
  ParsedSentence ps;
  const int n = static_cast<int>(heads.size());
  ps.raw.sent_id = "t";
  for (int i = 0; i < n; ++i) {
    ps.raw.forms.push_back("w" + std::to_string(i));
    ps.raw.upos.push_back("NOUN");
    ps.raw.deprels.push_back("dep");
    ps.subword_ids.push_back(Vocabulary::kNumSpecials +
                             (i % (vocab_size - Vocabulary::kNumSpecials)));
    ps.word_of_subword.push_back(i);
  }
  ps.raw.heads = heads;
  ps.effective_heads = heads;
  return ps;
}

SentenceRecord record_from_heads(const std::vector<int>& heads, int vocab_size, int delta) {
  SentenceRecord rec;
  rec.sentence = sentence_from_heads(heads, vocab_size);
  rec.distances = tree_distances(rec.sentence);
  rec.mask = sla_mask(rec.distances, delta);
  return rec;
}

ModelConfig tiny_config(bool sla) {
  ModelConfig cfg;
  cfg.layers = 2;
  cfg.hidden = 16;
  cfg.heads = 2;
  cfg.ffn = 32;
  cfg.vocab = 30;
  cfg.max_len = 16;
  cfg.tagset = 17;
  cfg.sla_enabled = sla;
  cfg.delta = 1;
  cfg.dropout = 0.0;
  return cfg;
}

template <typename T>
ModelBatch<T> batch_from_records(const std::vector<const SentenceRecord*>& recs, bool sla) {
  ModelBatch<T> mb;
  mb.batch = static_cast<int>(recs.size());
  mb.seq = 0;
  for (const auto* r : recs) mb.seq = std::max(mb.seq, r->sentence.num_subwords());
  mb.ids.assign(static_cast<size_t>(mb.batch) * mb.seq, Vocabulary::kPad);
  for (int b = 0; b < mb.batch; ++b) {
    const auto& s = recs[static_cast<size_t>(b)]->sentence;
    mb.lengths.push_back(s.num_subwords());
    for (int p = 0; p < s.num_subwords(); ++p)
      mb.ids[static_cast<size_t>(b) * mb.seq + static_cast<size_t>(p)] =
          s.subword_ids[static_cast<size_t>(p)];
  }
  mb.pad_mask = pad_mask_array<T>(mb.lengths, mb.seq);
  if (sla) {
    mb.local_mask = local_mask_array<T>(recs, mb.seq);
    mb.has_local = true;
  }
  return mb;
}

// Closed-form parameter count for this architecture.
int64_t expected_count(const ModelConfig& c) {
  const int64_t H = c.hidden, F = c.ffn, V = c.vocab, L = c.max_len, G = c.tagset;
  int64_t per_layer = 4 * (H * H + H) + 2 * 2 * H + (H * F + F) + (F * H + H);
  if (c.sla_enabled) per_layer += H + 1;
  return V * H + L * H + 2 * H            // embeddings + LN
         + c.layers * per_layer           // blocks
         + (H * H + H) + 2 * H + V        // tied MLM head: transform + LN + bias
         + (H * G + G);                   // PoS head
}

}  // namespace

TEST_CASE("default config parameter count sits in the 1%-of-base budget") {
  ModelConfig cfg;  // 3 layers, hidden 128, heads 4, ffn 512, vocab 8000
  EncoderModel<float> m = EncoderModel<float>::init(cfg, 1);
  const int64_t count = m.count_parameters();
  CHECK(count == expected_count(cfg));
  CHECK(count >= 500000);
  CHECK(count <= 2500000);
}

TEST_CASE("zero-layer config counts embeddings and heads only, and still runs") {
  ModelConfig cfg = tiny_config(false);
  cfg.layers = 0;
  EncoderModel<float> m = EncoderModel<float>::init(cfg, 1);
  CHECK(m.count_parameters() == expected_count(cfg));
  SentenceRecord rec = record_from_heads({0, 1, 2}, cfg.vocab, cfg.delta);
  Tape<float> tape;
  ModelBatch<float> mb = batch_from_records<float>({&rec}, false);
  ForwardOutput<float> fo = forward(tape, m, mb);
  CHECK(fo.mlm_logits.value().numel() == 3 * cfg.vocab);
  CHECK(!fo.attn_global.valid());  // no blocks, no attention capture
}

TEST_CASE("attention projection parameters scale quadratically in hidden size") {
  auto attn_params = [](int64_t h) { return 4 * (h * h + h); };
  const int64_t H = 16;
  // exact closed form: quadrupling minus the linear bias part
  CHECK(attn_params(2 * H) == 4 * attn_params(H) - 4 * 2 * H);
}

TEST_CASE("gate parameters exist exactly when SLA is enabled") {
  EncoderModel<float> off = EncoderModel<float>::init(tiny_config(false), 3);
  EncoderModel<float> on = EncoderModel<float>::init(tiny_config(true), 3);
  CHECK(off.find("layer0.attn.gate.w") == nullptr);
  CHECK(on.find("layer0.attn.gate.w") != nullptr);
  CHECK(on.count_parameters() - off.count_parameters() ==
        static_cast<int64_t>(tiny_config(true).layers) * (tiny_config(true).hidden + 1));
}

TEST_CASE("attention rows sum to one; padded keys get zero weight") {
  ModelConfig cfg = tiny_config(true);
  EncoderModel<float> m = EncoderModel<float>::init(cfg, 5);
  SentenceRecord a = record_from_heads({0, 1, 2, 2, 3}, cfg.vocab, cfg.delta);
  SentenceRecord b = record_from_heads({0, 1}, cfg.vocab, cfg.delta);
  ModelBatch<float> mb = batch_from_records<float>({&a, &b}, true);
  Tape<float> tape;
  ForwardOutput<float> fo = forward(tape, m, mb);

  for (Tensor<float> attn : {fo.attn_global, fo.attn_local, fo.attn_interp}) {
    REQUIRE(attn.valid());
    const Array<float>& av = attn.value();
    const int heads = attn.shape()[1], L = attn.shape()[2];
    for (int s = 0; s < 2; ++s) {
      const int n = mb.lengths[static_cast<size_t>(s)];
      for (int h = 0; h < heads; ++h)
        for (int i = 0; i < L; ++i) {
          double sum = 0.0;
          for (int j = 0; j < L; ++j) {
            const float w = av[((static_cast<int64_t>(s) * heads + h) * L + i) * L + j];
            CHECK(w >= 0.0f);
            if (j >= n) CHECK(w < 1e-20f);  // padding column
            sum += w;
          }
          CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
        }
    }
  }
}

TEST_CASE("local attention obeys the syntax mask at delta 0") {
  ModelConfig cfg = tiny_config(true);
  cfg.delta = 0;
  EncoderModel<float> m = EncoderModel<float>::init(cfg, 6);
  SentenceRecord chain = record_from_heads({0, 1, 2, 3, 4}, cfg.vocab, 0);
  ModelBatch<float> mb = batch_from_records<float>({&chain}, true);
  Tape<float> tape;
  ForwardOutput<float> fo = forward(tape, m, mb);
  const Array<float>& local = fo.attn_local.value();
  const int heads = fo.attn_local.shape()[1], L = fo.attn_local.shape()[2];
  for (int h = 0; h < heads; ++h)
    for (int i = 0; i < L; ++i)
      for (int j = 0; j < L; ++j) {
        const float w = local[((static_cast<int64_t>(h)) * L + i) * L + j];
        if (!chain.mask.is_local(i, j)) CHECK(w < 1e-20f);
      }
}

TEST_CASE("an all-visible local mask reproduces the SLA-off forward") {
  ModelConfig cfg_on = tiny_config(true);
  EncoderModel<float> off = EncoderModel<float>::init(tiny_config(false), 9);
  EncoderModel<float> on = EncoderModel<float>::init(cfg_on, 9);
  for (auto& [name, arr] : on.params) {
    const Array<float>* src = off.find(name);
    if (src) arr = *src;  // share weights; gate params stay whatever they are
  }
  SentenceRecord a = record_from_heads({0, 1, 1, 3}, cfg_on.vocab, cfg_on.delta);
  SentenceRecord b = record_from_heads({2, 0, 2}, cfg_on.vocab, cfg_on.delta);

  ModelBatch<float> mb_off = batch_from_records<float>({&a, &b}, false);
  ModelBatch<float> mb_on = mb_off;
  mb_on.local_mask = mb_on.pad_mask;  // everything real is visible
  mb_on.has_local = true;

  Tape<float> t1, t2;
  ForwardOutput<float> fo_off = forward(t1, off, mb_off);
  ForwardOutput<float> fo_on = forward(t2, on, mb_on);
  const Array<float>& h1 = fo_off.hidden.value();
  const Array<float>& h2 = fo_on.hidden.value();
  for (int64_t i = 0; i < h1.numel(); ++i) CHECK(std::abs(h1[i] - h2[i]) < 1e-6f);
  const Array<float>& l1 = fo_off.mlm_logits.value();
  const Array<float>& l2 = fo_on.mlm_logits.value();
  for (int64_t i = 0; i < l1.numel(); ++i) CHECK(std::abs(l1[i] - l2[i]) < 1e-5f);
}

TEST_CASE("a saturated gate reproduces the SLA-off forward despite a real mask") {
  ModelConfig cfg = tiny_config(true);
  EncoderModel<float> off = EncoderModel<float>::init(tiny_config(false), 10);
  EncoderModel<float> on = EncoderModel<float>::init(cfg, 10);
  for (auto& [name, arr] : on.params) {
    const Array<float>* src = off.find(name);
    if (src) arr = *src;
    if (name.find("gate.b") != std::string::npos)
      arr = Array<float>::full(arr.shape, 1e4f);  // sigmoid saturates to exactly 1
  }
  SentenceRecord rec = record_from_heads({0, 1, 2, 2}, cfg.vocab, cfg.delta);
  ModelBatch<float> mb_off = batch_from_records<float>({&rec}, false);
  ModelBatch<float> mb_on = batch_from_records<float>({&rec}, true);
  Tape<float> t1, t2;
  ForwardOutput<float> fo_off = forward(t1, off, mb_off);
  ForwardOutput<float> fo_on = forward(t2, on, mb_on);
  CHECK(fo_on.gates[0].value()[0] == 1.0f);
  const Array<float>& h1 = fo_off.hidden.value();
  const Array<float>& h2 = fo_on.hidden.value();
  for (int64_t i = 0; i < h1.numel(); ++i) CHECK(std::abs(h1[i] - h2[i]) < 1e-6f);
}

TEST_CASE("forward validates mask presence and sequence length") {
  ModelConfig cfg = tiny_config(true);
  EncoderModel<float> m = EncoderModel<float>::init(cfg, 11);
  SentenceRecord rec = record_from_heads({0, 1}, cfg.vocab, cfg.delta);
  ModelBatch<float> without = batch_from_records<float>({&rec}, false);
  Tape<float> tape;
  CHECK_THROWS_WITH_AS(forward(tape, m, without), doctest::Contains("no local mask"),
                       std::invalid_argument);

  std::vector<int> long_heads(static_cast<size_t>(cfg.max_len) + 1, 1);
  long_heads[0] = 0;
  SentenceRecord too_long = record_from_heads(long_heads, cfg.vocab, cfg.delta);
  ModelBatch<float> big = batch_from_records<float>({&too_long}, true);
  CHECK_THROWS_WITH_AS(forward(tape, m, big), doctest::Contains("exceeds max_len"),
                       std::invalid_argument);
}

TEST_CASE("eval forward is deterministic; train dropout follows its rng stream") {
  ModelConfig cfg = tiny_config(false);
  cfg.dropout = 0.3;
  EncoderModel<float> m = EncoderModel<float>::init(cfg, 12);
  SentenceRecord rec = record_from_heads({0, 1, 2, 1}, cfg.vocab, cfg.delta);
  ModelBatch<float> mb = batch_from_records<float>({&rec}, false);

  Tape<float> t1, t2;
  const auto a = forward(t1, m, mb).hidden.value().data;
  const auto b = forward(t2, m, mb).hidden.value().data;
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);

  Rng d1(7), d2(7), d3(8);
  Tape<float> t3, t4, t5;
  const auto c = forward(t3, m, mb, true, &d1).hidden.value().data;
  const auto d = forward(t4, m, mb, true, &d2).hidden.value().data;
  const auto e = forward(t5, m, mb, true, &d3).hidden.value().data;
  CHECK(std::memcmp(c.data(), d.data(), c.size() * sizeof(float)) == 0);
  CHECK(std::memcmp(c.data(), e.data(), c.size() * sizeof(float)) != 0);
}

TEST_CASE("checkpoint save -> load -> forward is bit-identical") {
  ModelConfig cfg = tiny_config(true);
  EncoderModel<float> m = EncoderModel<float>::init(cfg, 13);
  SentenceRecord rec = record_from_heads({0, 1, 1, 2}, cfg.vocab, cfg.delta);
  ModelBatch<float> mb = batch_from_records<float>({&rec}, true);

  Tape<float> t1;
  const auto before = forward(t1, m, mb).mlm_logits.value().data;

  Checkpoint<float> ckpt;
  ckpt.config_json = "{}";
  ckpt.step = 17;
  ckpt.params = m.params;
  const std::string path = "model_roundtrip_test.bin";
  save_checkpoint(ckpt, path);
  Checkpoint<float> loaded = load_checkpoint<float>(path);
  std::filesystem::remove(path);

  CHECK(loaded.step == 17);
  REQUIRE(loaded.params.size() == m.params.size());
  EncoderModel<float> m2;
  m2.cfg = cfg;
  m2.params = loaded.params;
  Tape<float> t2;
  const auto after = forward(t2, m2, mb).mlm_logits.value().data;
  REQUIRE(before.size() == after.size());
  CHECK(std::memcmp(before.data(), after.data(), before.size() * sizeof(float)) == 0);
}

TEST_CASE("checkpoint loader rejects corrupt and mismatched files") {
  const std::string path = "model_badmagic_test.bin";
  {
    std::ofstream out(path, std::ios::binary);
    out << "not a checkpoint";
  }
  CHECK_THROWS_AS(load_checkpoint<float>(path), std::runtime_error);
  std::filesystem::remove(path);

  Checkpoint<double> ckpt64;
  ckpt64.config_json = "{}";
  ckpt64.params.emplace_back("w", Array<double>({2}, {1.0, 2.0}));
  save_checkpoint(ckpt64, path);
  CHECK_THROWS_WITH_AS(load_checkpoint<float>(path), doctest::Contains("precision"),
                       std::runtime_error);
  std::filesystem::remove(path);
}
