#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "treelm/losses.hpp"
#include "treelm/synth.hpp"
#include "treelm/train.hpp"

using namespace treelm;

namespace {

Array<double> random_array(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Array<double> a(std::move(shape));
  for (int64_t i = 0; i < a.numel(); ++i) a[i] = lo + (hi - lo) * rng.next_double();
  return a;
}

std::vector<double> random_distribution(int n, Rng& rng) {
  std::vector<double> p(static_cast<size_t>(n));
  double sum = 0.0;
  for (auto& v : p) {
    v = 0.01 + rng.next_double();
    sum += v;
  }
  for (auto& v : p) v /= sum;
  return p;
}

}  // namespace

// ---------------------------------------------------------------------------
// jsd
// ---------------------------------------------------------------------------

TEST_CASE("jsd of identical distributions is zero") {
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    const auto p = random_distribution(2 + static_cast<int>(rng.uniform(8)), rng);
    CHECK(std::abs(jsd(p, p)) < 1e-12);
  }
}

TEST_CASE("jsd of disjoint-support distributions is ln 2") {
  const std::vector<double> p = {1.0, 0.0};
  const std::vector<double> q = {0.0, 1.0};
  CHECK(std::abs(jsd(p, q) - std::log(2.0)) < 1e-9);
  const std::vector<double> p2 = {0.5, 0.5, 0.0, 0.0};
  const std::vector<double> q2 = {0.0, 0.0, 0.25, 0.75};
  CHECK(std::abs(jsd(p2, q2) - std::log(2.0)) < 1e-9);
}

TEST_CASE("jsd is symmetric and bounded by ln 2") {
  Rng rng(2);
  for (int t = 0; t < 100; ++t) {
    const int n = 2 + static_cast<int>(rng.uniform(10));
    const auto p = random_distribution(n, rng);
    const auto q = random_distribution(n, rng);
    const double a = jsd(p, q);
    const double b = jsd(q, p);
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
    CHECK(a >= -1e-12);
    CHECK(a <= std::log(2.0) + 1e-12);
  }
}

TEST_CASE("jsd rejects length mismatches") {
  CHECK_THROWS_AS(jsd<double>({0.5, 0.5}, {1.0}), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// infonce
// ---------------------------------------------------------------------------

TEST_CASE("infonce closed forms") {
  // equal positive and single equal negative: probability 1/2
  CHECK(std::abs(infonce(0.37, std::vector<double>{0.37}, 0.1) - std::log(2.0)) < 1e-9);
  // equal similarities with K negatives: ln(1+K)
  for (int k = 1; k <= 6; ++k) {
    std::vector<double> negs(static_cast<size_t>(k), -0.2);
    CHECK(std::abs(infonce(-0.2, negs, 0.1) - std::log(1.0 + k)) < 1e-9);
  }
  // strong positive: log(1 + e^-20)
  const double expected = std::log(1.0 + std::exp(-20.0));
  CHECK(std::abs(infonce(1.0, std::vector<double>{-1.0}, 0.1) - expected) < 1e-12);
}

TEST_CASE("infonce validates its preconditions") {
  CHECK_THROWS_AS(infonce(0.0, std::vector<double>{}, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(infonce(0.0, std::vector<double>{0.1}, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(infonce(0.0, std::vector<double>{0.1}, 1.0), std::invalid_argument);
}

TEST_CASE("adding a negative never decreases infonce") {
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    const double pos = rng.next_double() * 2 - 1;
    std::vector<double> negs;
    const int k = 1 + static_cast<int>(rng.uniform(5));
    for (int i = 0; i < k; ++i) negs.push_back(rng.next_double() * 2 - 1);
    const double before = infonce(pos, negs, 0.1);
    negs.push_back(rng.next_double() * 2 - 1);
    const double after = infonce(pos, negs, 0.1);
    CHECK(after >= before - 1e-12);
  }
}

TEST_CASE("infonce moves the right way with pos and neg similarities") {
  Rng rng(4);
  for (int t = 0; t < 100; ++t) {
    const double pos = rng.next_double() - 0.5;
    std::vector<double> negs = {rng.next_double() - 0.5, rng.next_double() - 0.5};
    const double base = infonce(pos, negs, 0.1);
    CHECK(infonce(pos + 0.05, negs, 0.1) < base);
    std::vector<double> harder = negs;
    harder[0] += 0.05;
    CHECK(infonce(pos, harder, 0.1) > base);
  }
}

TEST_CASE("infonce_node agrees with the eager form and differentiates") {
  Tape<double> tape;
  Tensor<double> pos = tape.leaf(Array<double>::scalar(0.3), true);
  Tensor<double> n1 = tape.leaf(Array<double>::scalar(-0.1), true);
  Tensor<double> n2 = tape.leaf(Array<double>::scalar(0.2), true);
  Tensor<double> loss = infonce_node(pos, {n1, n2}, 0.1);
  CHECK(loss.value()[0] ==
        doctest::Approx(infonce(0.3, std::vector<double>{-0.1, 0.2}, 0.1)).epsilon(1e-12));
  tape.backward(loss);
  CHECK(pos.grad()[0] < 0.0);  // higher positive similarity lowers the loss
  CHECK(n1.grad()[0] > 0.0);
  CHECK(n2.grad()[0] > 0.0);
}

// ---------------------------------------------------------------------------
// mlm / pos losses
// ---------------------------------------------------------------------------

TEST_CASE("mlm loss on uniform logits is ln V, on confident logits near 0") {
  const int v = 11;
  Tape<double> tape;
  Tensor<double> uniform = tape.leaf(Array<double>({1, v}), true);  // all zeros
  ScalarLoss<double> lu = mlm_loss(uniform, {4});
  CHECK(lu.count == 1);
  CHECK(lu.node.value()[0] == doctest::Approx(std::log(static_cast<double>(v))).epsilon(1e-9));

  Array<double> confident({1, v});
  confident[4] = 50.0;
  Tensor<double> sharp = tape.leaf(confident, true);
  CHECK(mlm_loss(sharp, {4}).node.value()[0] < 1e-9);
}

TEST_CASE("mlm loss over two masked positions is the mean of hand-computed entries") {
  Tape<double> tape;
  Array<double> logits({3, 4});
  // row 0: [1, 0, 0, 0], target 0; row 2: [0, 2, 0, 1], target 1; row 1 ignored
  logits[0] = 1.0;
  logits[2 * 4 + 1] = 2.0;
  logits[2 * 4 + 3] = 1.0;
  auto lse = [](std::vector<double> xs) {
    double m = xs[0];
    for (double x : xs) m = std::max(m, x);
    double s = 0;
    for (double x : xs) s += std::exp(x - m);
    return m + std::log(s);
  };
  const double ce0 = lse({1, 0, 0, 0}) - 1.0;
  const double ce2 = lse({0, 2, 0, 1}) - 2.0;
  Tensor<double> node = tape.leaf(logits, true);
  ScalarLoss<double> loss = mlm_loss(node, {0, -1, 1});
  CHECK(loss.count == 2);
  CHECK(loss.node.value()[0] == doctest::Approx(0.5 * (ce0 + ce2)).epsilon(1e-12));
}

TEST_CASE("zero masked positions produce a zero loss") {
  Tape<double> tape;
  Tensor<double> logits = tape.leaf(Array<double>({2, 5}), true);
  ScalarLoss<double> loss = mlm_loss(logits, {-1, -1});
  CHECK(loss.count == 0);
  CHECK(loss.node.value()[0] == 0.0);
}

TEST_CASE("pos loss: uniform logits give ln(tagset); unsupervised batches give 0") {
  const int tagset = 17;
  Tape<double> tape;
  Tensor<double> logits = tape.leaf(Array<double>({4, tagset}), true);
  ScalarLoss<double> uniform = pos_loss(logits, {3, 0, -1, 9});
  CHECK(uniform.node.value()[0] ==
        doctest::Approx(std::log(static_cast<double>(tagset))).epsilon(1e-9));
  ScalarLoss<double> none = pos_loss(logits, {-1, -1, -1, -1});
  CHECK(none.count == 0);
  CHECK(none.node.value()[0] == 0.0);
}

TEST_CASE("mixed-batch pos loss equals the loss restricted to the supervised subset") {
  Rng rng(5);
  Tape<double> tape;
  const Array<double> lv = random_array({6, 7}, rng, -2, 2);
  Tensor<double> logits = tape.leaf(lv, true);
  const std::vector<int> targets = {2, -1, 4, -1, -1, 0};
  ScalarLoss<double> full = pos_loss(logits, targets);

  // subset recomputation: rows 0, 2, 5 only
  Tensor<double> subset = take_rows(logits, {0, 2, 5});
  ScalarLoss<double> sub = pos_loss(subset, {2, 4, 0});
  CHECK(full.node.value()[0] == doctest::Approx(sub.node.value()[0]).epsilon(1e-12));
  CHECK(full.count == sub.count);
}

// ---------------------------------------------------------------------------
// phrase loss
// ---------------------------------------------------------------------------

namespace {

// Hand-assembled ForwardOutput with a prescribed last-layer attention
// stack (1 sentence, 1 head) and hidden states.
ForwardOutput<double> fake_output(Tape<double>& tape, const Array<double>& attn,
                                  const Array<double>& hidden) {
  ForwardOutput<double> fo;
  fo.attn_global = tape.leaf(attn, true);
  fo.hidden = tape.leaf(hidden, true);
  return fo;
}

}  // namespace

TEST_CASE("phrase loss: positive identical, negatives disjoint, closed form") {
  Tape<double> tape;
  // 1 sentence, 1 head, 4 positions, length 3 (position 3 is padding mass)
  Array<double> attn({1, 1, 4, 4});
  auto set_row = [&](int i, std::initializer_list<double> row) {
    int j = 0;
    for (double v : row) attn[((0 * 1 + 0) * 4 + i) * 4 + j++] = v;
  };
  // anchor row == positive row after renormalization over the first 3
  // columns; the negative's support is disjoint from theirs
  set_row(0, {0.4, 0.4, 0.0, 0.2});
  set_row(1, {0.2, 0.2, 0.0, 0.6});
  set_row(2, {0.0, 0.0, 1.0, 0.0});
  set_row(3, {0.25, 0.25, 0.25, 0.25});
  Array<double> hidden({1, 4, 2});
  ForwardOutput<double> fo = fake_output(tape, attn, hidden);

  ContrastiveBatch batch;
  batch.tau = 0.1;
  PhraseSample s;
  s.anchor = 0;
  s.positive = 1;
  s.ancestor = 0;
  s.negatives = {2};
  batch.phrases = {{s}};
  ScalarLoss<double> loss = phrase_loss(tape, fo, {3}, batch);
  CHECK(loss.count == 1);
  // sims: pos = -JSD = 0, neg = -ln 2; closed-form InfoNCE
  const double expected = infonce(0.0, std::vector<double>{-std::log(2.0)}, 0.1);
  CHECK(loss.node.value()[0] == doctest::Approx(expected).epsilon(1e-9));
  REQUIRE(batch.phrase_sims.size() == 1);
  CHECK(std::abs(batch.phrase_sims[0].pos) < 1e-12);
  CHECK(batch.phrase_sims[0].negs[0] == doctest::Approx(-std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("phrase loss with identical rows is ln(1 + k_neg)") {
  Tape<double> tape;
  Array<double> attn({1, 2, 5, 5});  // two heads, all rows uniform
  for (int64_t i = 0; i < attn.numel(); ++i) attn[i] = 0.2;
  Array<double> hidden({1, 5, 2});
  ForwardOutput<double> fo = fake_output(tape, attn, hidden);
  ContrastiveBatch batch;
  batch.tau = 0.1;
  PhraseSample s;
  s.anchor = 0;
  s.positive = 1;
  s.ancestor = 1;
  s.negatives = {2, 3, 4};
  batch.phrases = {{s}};
  ScalarLoss<double> loss = phrase_loss(tape, fo, {5}, batch);
  CHECK(loss.node.value()[0] == doctest::Approx(std::log(4.0)).epsilon(1e-9));
}

TEST_CASE("phrase loss of an empty batch is zero") {
  Tape<double> tape;
  ForwardOutput<double> fo = fake_output(tape, Array<double>({1, 1, 2, 2}), Array<double>({1, 2, 2}));
  ContrastiveBatch batch;
  batch.tau = 0.1;
  batch.phrases = {{}};
  ScalarLoss<double> loss = phrase_loss(tape, fo, {2}, batch);
  CHECK(loss.count == 0);
  CHECK(loss.node.value()[0] == 0.0);
}

// ---------------------------------------------------------------------------
// tree loss
// ---------------------------------------------------------------------------

TEST_CASE("tree similarity matches the hand-built 2-d example") {
  Tape<double> tape;
  // states: root [1,0], children [1,0] and [0,1]
  Array<double> states({3, 2}, {1.0, 0.0, 1.0, 0.0, 0.0, 1.0});
  Tensor<double> z = tape.leaf(states, true);
  Tensor<double> sim = detail::tree_similarity(z, 0, {0, 1, 2});
  // scores = [1, 0]; e = softmax -> [e/(1+e), 1/(1+e)]
  const double e1 = std::exp(1.0) / (std::exp(1.0) + 1.0);
  const double e2 = 1.0 / (std::exp(1.0) + 1.0);
  const double expected = e1 / std::sqrt(e1 * e1 + e2 * e2);
  CHECK(sim.value()[0] == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("tree similarity with a singleton child is plain cosine") {
  Tape<double> tape;
  Array<double> states({2, 3}, {1.0, 2.0, 0.0, -1.0, 1.0, 0.5});
  Tensor<double> z = tape.leaf(states, true);
  Tensor<double> sim = detail::tree_similarity(z, 0, {0, 1});
  Tensor<double> a = reshape(take_rows(z, {0}), {3});
  Tensor<double> b = reshape(take_rows(z, {1}), {3});
  Tensor<double> direct = cosine_similarity(a, b);
  CHECK(sim.value()[0] == doctest::Approx(direct.value()[0]).epsilon(1e-12));
}

TEST_CASE("tree loss with identical nonzero states is ln(1 + negatives)") {
  Tape<double> tape;
  Array<double> hidden({1, 6, 3});
  for (int64_t i = 0; i < hidden.numel(); ++i) hidden[i] = 0.7;
  ForwardOutput<double> fo = fake_output(tape, Array<double>({1, 1, 6, 6}), hidden);
  ContrastiveBatch batch;
  batch.tau = 0.1;
  TreeSample s;
  s.root = 0;
  s.positive_tree = {0, 1, 2};
  TreeSample::Negative n1{4, 1, {0, 2, 4}};
  TreeSample::Negative n2{5, 2, {0, 1, 5}};
  s.negatives = {n1, n2};
  batch.trees = {{s}};
  ScalarLoss<double> loss = tree_loss(tape, fo, batch);
  CHECK(loss.count == 1);
  CHECK(loss.node.value()[0] == doctest::Approx(std::log(3.0)).epsilon(1e-9));
}

TEST_CASE("tree loss skips samples whose positive tree has no children") {
  Tape<double> tape;
  ForwardOutput<double> fo =
      fake_output(tape, Array<double>({1, 1, 3, 3}), Array<double>({1, 3, 2}));
  ContrastiveBatch batch;
  batch.tau = 0.1;
  TreeSample s;
  s.root = 0;
  s.positive_tree = {0};  // degenerate
  s.negatives = {TreeSample::Negative{1, 0, {0, 1}}};
  batch.trees = {{s}};
  ScalarLoss<double> loss = tree_loss(tape, fo, batch);
  CHECK(loss.count == 0);
  CHECK(batch.skipped_tree_samples == 1);
  CHECK(loss.node.value()[0] == 0.0);
}

// ---------------------------------------------------------------------------
// total loss and end-to-end gradients
// ---------------------------------------------------------------------------

TEST_CASE("total loss is the exact sum of its active components") {
  Tape<double> tape;
  std::map<std::string, Tensor<double>> parts;
  parts["mlm"] = tape.leaf(Array<double>::scalar(1.25), false);
  parts["phrase"] = tape.leaf(Array<double>::scalar(0.5), false);
  parts["tree"] = tape.leaf(Array<double>::scalar(0.25), false);
  parts["pos"] = tape.leaf(Array<double>::scalar(2.0), false);

  CHECK(total_loss(tape, *Variant::parse("m"), parts).value()[0] == 1.25);
  CHECK(total_loss(tape, *Variant::parse("mpt"), parts).value()[0] == doctest::Approx(2.0));
  CHECK(total_loss(tape, *Variant::parse("mxpt"), parts).value()[0] == doctest::Approx(4.0));

  std::map<std::string, Tensor<double>> missing;
  missing["mlm"] = parts["mlm"];
  CHECK_THROWS_WITH_AS(total_loss(tape, *Variant::parse("mpt"), missing),
                       doctest::Contains("phrase"), std::invalid_argument);
}

TEST_CASE("variant grid parses into the right component sets") {
  CHECK(!Variant::parse("q").has_value());
  CHECK(!Variant::parse("msla").has_value());
  const Variant mpt_sla = *Variant::parse("mpt-sla");
  CHECK(mpt_sla.phrase);
  CHECK(mpt_sla.tree);
  CHECK(mpt_sla.sla);
  CHECK(!mpt_sla.pos_task);
  const Variant mx = *Variant::parse("mx");
  CHECK(mx.pos_task);
  CHECK(!mx.phrase);
  CHECK(!mx.sla);
  const Variant mxpt_sla = *Variant::parse("mxpt-sla");
  CHECK((mxpt_sla.pos_task && mxpt_sla.phrase && mxpt_sla.tree && mxpt_sla.sla));
}

TEST_CASE("mxpt on an untagged batch equals mpt on the same batch") {
  SynthOptions opt;
  opt.num_sentences = 8;
  opt.seed = 77;
  const auto sentences = generate_sentences(opt);
  const Vocabulary vocab = build_vocab(sentences, 96);
  PreprocessParams pp;
  pp.seed = 77;
  const CorpusArtifact artifact = preprocess_corpus(sentences, vocab, pp);

  ModelConfig mc;
  mc.layers = 1;
  mc.hidden = 16;
  mc.heads = 2;
  mc.ffn = 24;
  mc.vocab = vocab.size();
  mc.max_len = 32;
  mc.dropout = 0.0;
  EncoderModel<double> model = EncoderModel<double>::init(mc, 3);

  TrainConfig cfg;
  cfg.model = mc;
  std::vector<const SentenceRecord*> recs;
  for (size_t i = 0; i < 4; ++i) recs.push_back(&artifact.records[i]);
  Rng rng(9);
  MlmBatch batch = make_mlm_batch(recs, vocab, cfg, rng, /*tagged=*/false);

  Tape<double> t1, t2;
  MlmBatch b1 = batch, b2 = batch;
  StepEval<double> mpt = evaluate_step(t1, model, b1, *Variant::parse("mpt"), false, nullptr);
  StepEval<double> mxpt = evaluate_step(t2, model, b2, *Variant::parse("mxpt"), false, nullptr);
  CHECK(mxpt.components.at("pos") == 0.0);
  CHECK(mpt.components.at("total") == doctest::Approx(mxpt.components.at("total")).epsilon(1e-12));
}

TEST_CASE("finite differences pass through phrase and tree losses end to end") {
  // tiny model, full pipeline, spot-checked parameter groups at 64-bit
  SynthOptions opt;
  opt.num_sentences = 16;
  opt.seed = 55;
  const auto sentences = generate_sentences(opt);
  const Vocabulary vocab = build_vocab(sentences, 96);
  PreprocessParams pp;
  pp.seed = 55;
  const CorpusArtifact artifact = preprocess_corpus(sentences, vocab, pp);

  ModelConfig mc;
  mc.layers = 1;
  mc.hidden = 8;
  mc.heads = 2;
  mc.ffn = 12;
  mc.vocab = vocab.size();
  mc.max_len = 32;
  mc.dropout = 0.0;
  EncoderModel<double> model = EncoderModel<double>::init(mc, 4);

  std::vector<const SentenceRecord*> recs;
  for (const auto& rec : artifact.records) {
    if (!rec.phrases.empty() && !rec.trees.empty()) recs.push_back(&rec);
    if (recs.size() == 2) break;
  }
  REQUIRE(recs.size() == 2);

  TrainConfig cfg;
  cfg.model = mc;
  Rng rng(10);
  MlmBatch batch = make_mlm_batch(recs, vocab, cfg, rng, false);
  const Variant variant = *Variant::parse("mpt");

  auto loss_at = [&]() {
    Tape<double> tape;
    MlmBatch b = batch;
    return evaluate_step(tape, model, b, variant, false, nullptr).components.at("total");
  };

  Tape<double> tape;
  MlmBatch b = batch;
  StepEval<double> ev = evaluate_step(tape, model, b, variant, false, nullptr);
  REQUIRE(ev.phrase_samples > 0);
  REQUIRE(ev.tree_samples > 0);
  tape.backward(ev.total);

  const double eps = 1e-5;
  for (const auto& [name, node] : ev.fo.param_nodes) {
    if (name != "layer0.attn.wq" && name != "embeddings.token" && name != "mlm.dense.w" &&
        name != "layer0.ln2.gamma")
      continue;
    Array<double> analytic = node.grad();
    if (analytic.empty()) analytic = Array<double>(node.value().shape);
    Array<double>* param = model.find(name);
    REQUIRE(param != nullptr);
    // spot-check a deterministic spread of coordinates
    for (int64_t i = 0; i < param->numel(); i += std::max<int64_t>(1, param->numel() / 17)) {
      const double old = (*param)[i];
      (*param)[i] = old + eps;
      const double plus = loss_at();
      (*param)[i] = old - eps;
      const double minus = loss_at();
      (*param)[i] = old;
      const double numeric = (plus - minus) / (2 * eps);
      const double rel = std::abs(analytic[i] - numeric) /
                         std::max({std::abs(analytic[i]), std::abs(numeric), 1e-4});
      CAPTURE(name);
      CAPTURE(i);
      REQUIRE(rel < 1e-5);
    }
  }
}
