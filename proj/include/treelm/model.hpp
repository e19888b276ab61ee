#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "treelm/rng.hpp"
#include "treelm/tensor.hpp"

namespace treelm {

struct ModelConfig {
  int layers = 3;
  int hidden = 128;
  int heads = 4;
  int ffn = 512;
  int vocab = 8000;
  int max_len = 128;
  int tagset = 17;
  bool sla_enabled = false;
  int delta = 2;
  double dropout = 0.1;
  int precision = 32;  // 32 or 64; which instantiation the drivers pick

  std::vector<std::string> validate() const {
    std::vector<std::string> errors;
    auto positive = [&](int v, const char* what) {
      if (v < 1) errors.push_back(std::string(what) + " must be >= 1, got " + std::to_string(v));
    };
    if (layers < 0) errors.push_back("layers must be >= 0, got " + std::to_string(layers));
    positive(hidden, "hidden");
    positive(heads, "heads");
    positive(ffn, "ffn");
    positive(vocab, "vocab");
    positive(max_len, "max_len");
    positive(tagset, "tagset");
    if (heads >= 1 && hidden >= 1 && hidden % heads != 0)
      errors.push_back("hidden (" + std::to_string(hidden) + ") must be divisible by heads (" +
                       std::to_string(heads) + ")");
    if (delta < 0) errors.push_back("delta must be >= 0, got " + std::to_string(delta));
    if (dropout < 0.0 || dropout >= 1.0)
      errors.push_back("dropout must be in [0,1), got " + std::to_string(dropout));
    if (precision != 32 && precision != 64)
      errors.push_back("precision must be 32 or 64, got " + std::to_string(precision));
    return errors;
  }
};

// Post-norm transformer encoder with token + learned absolute position
// embeddings, a tied MLM head (transform + embedding-transpose decoder)
// and a linear PoS head. With sla_enabled each block runs a second,
// syntactically masked attention path and blends the two distributions
// with a per-position sigmoid gate.
template <typename T>
struct EncoderModel {
  ModelConfig cfg;
  std::vector<std::pair<std::string, Array<T>>> params;  // ordered, names are stable

  Array<T>* find(const std::string& name) {
    for (auto& [n, a] : params)
      if (n == name) return &a;
    return nullptr;
  }
  const Array<T>* find(const std::string& name) const {
    return const_cast<EncoderModel*>(this)->find(name);
  }

  int64_t count_parameters() const {
    int64_t total = 0;
    for (const auto& [n, a] : params) total += a.numel();
    return total;
  }

  static EncoderModel init(const ModelConfig& cfg, uint64_t seed);
};

// One padded batch ready for the encoder. Additive masks hold 0 where a
// key is visible and kNegInf where it is padding (pad_mask) or
// syntactically non-local (local_mask, which also re-masks padding).
template <typename T>
struct ModelBatch {
  int batch = 0;
  int seq = 0;
  std::vector<int> ids;       // batch*seq, [PAD] at padding
  std::vector<int> lengths;   // per sentence
  Array<T> pad_mask;          // (B, L, L)
  Array<T> local_mask;        // (B, L, L), only meaningful when has_local
  bool has_local = false;
};

template <typename T>
struct ForwardOutput {
  Tensor<T> hidden;       // (B, L, H) final states
  Tensor<T> attn_global;  // (B, heads, L, L), last layer, softmax of unmasked-but-padded scores
  Tensor<T> attn_local;   // last layer local path; valid() only with SLA
  Tensor<T> attn_interp;  // last layer blended rows; valid() only with SLA
  std::vector<Tensor<T>> gates;  // per layer (B, L); empty without SLA
  Tensor<T> mlm_logits;   // (B*L, vocab)
  Tensor<T> pos_logits;   // (B*L, tagset)
  std::vector<std::pair<std::string, Tensor<T>>> param_nodes;  // leaves bound this call
};

// Runs the encoder over a batch. Dropout draws come from `dropout_rng`
// and are applied only when train_mode is true; eval forwards are
// deterministic functions of (weights, batch).
template <typename T>
ForwardOutput<T> forward(Tape<T>& tape, const EncoderModel<T>& model, const ModelBatch<T>& batch,
                         bool train_mode = false, Rng* dropout_rng = nullptr);

// ---------------------------------------------------------------------------
// implementation
// ---------------------------------------------------------------------------

template <typename T>
EncoderModel<T> EncoderModel<T>::init(const ModelConfig& cfg, uint64_t seed) {
  {
    const auto errors = cfg.validate();
    if (!errors.empty()) throw std::invalid_argument("ModelConfig: " + errors.front());
  }
  EncoderModel<T> m;
  m.cfg = cfg;
  Rng rng(stream_hash(seed, "model-init"));
  const T std_dev = T(0.02);

  auto normal_param = [&](const std::string& name, std::vector<int> shape) {
    Array<T> a(std::move(shape));
    for (int64_t i = 0; i < a.numel(); ++i) a[i] = static_cast<T>(rng.normal(0.0, 1.0)) * std_dev;
    m.params.emplace_back(name, std::move(a));
  };
  auto const_param = [&](const std::string& name, std::vector<int> shape, T v) {
    m.params.emplace_back(name, Array<T>::full(std::move(shape), v));
  };

  normal_param("embeddings.token", {cfg.vocab, cfg.hidden});
  normal_param("embeddings.position", {cfg.max_len, cfg.hidden});
  const_param("embeddings.ln.gamma", {cfg.hidden}, T(1));
  const_param("embeddings.ln.beta", {cfg.hidden}, T(0));

  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"})
      normal_param(p + w, {cfg.hidden, cfg.hidden});
    for (const char* b : {"attn.bq", "attn.bk", "attn.bv", "attn.bo"})
      const_param(p + b, {cfg.hidden}, T(0));
    if (cfg.sla_enabled) {
      normal_param(p + "attn.gate.w", {cfg.hidden, 1});
      const_param(p + "attn.gate.b", {1}, T(0));
    }
    const_param(p + "ln1.gamma", {cfg.hidden}, T(1));
    const_param(p + "ln1.beta", {cfg.hidden}, T(0));
    normal_param(p + "ffn.w1", {cfg.hidden, cfg.ffn});
    const_param(p + "ffn.b1", {cfg.ffn}, T(0));
    normal_param(p + "ffn.w2", {cfg.ffn, cfg.hidden});
    const_param(p + "ffn.b2", {cfg.hidden}, T(0));
    const_param(p + "ln2.gamma", {cfg.hidden}, T(1));
    const_param(p + "ln2.beta", {cfg.hidden}, T(0));
  }

  normal_param("mlm.dense.w", {cfg.hidden, cfg.hidden});
  const_param("mlm.dense.b", {cfg.hidden}, T(0));
  const_param("mlm.ln.gamma", {cfg.hidden}, T(1));
  const_param("mlm.ln.beta", {cfg.hidden}, T(0));
  const_param("mlm.bias", {cfg.vocab}, T(0));  // decoder weight is tied to embeddings.token

  normal_param("pos_head.w", {cfg.hidden, cfg.tagset});
  const_param("pos_head.b", {cfg.tagset}, T(0));
  return m;
}

namespace detail {

template <typename T>
Array<T> dropout_mask_array(const std::vector<int>& shape, double rate, Rng& rng) {
  Array<T> mask(shape);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (int64_t i = 0; i < mask.numel(); ++i)
    mask[i] = rng.next_double() < rate ? T(0) : keep_scale;
  return mask;
}

}  // namespace detail

template <typename T>
ForwardOutput<T> forward(Tape<T>& tape, const EncoderModel<T>& model, const ModelBatch<T>& batch,
                         bool train_mode, Rng* dropout_rng) {
  const ModelConfig& cfg = model.cfg;
  if (batch.seq > cfg.max_len)
    throw std::invalid_argument("forward: sequence length " + std::to_string(batch.seq) +
                                " exceeds max_len " + std::to_string(cfg.max_len));
  if (cfg.sla_enabled && !batch.has_local)
    throw std::invalid_argument("forward: SLA is enabled but the batch carries no local mask");

  const int B = batch.batch, L = batch.seq, H = cfg.hidden;
  const bool use_dropout = train_mode && cfg.dropout > 0.0;
  if (use_dropout && dropout_rng == nullptr)
    throw std::invalid_argument("forward: dropout requires an rng in train mode");

  ForwardOutput<T> out;
  auto bind = [&](const std::string& name) {
    const Array<T>* a = model.find(name);
    if (!a) throw std::logic_error("forward: missing parameter " + name);
    Tensor<T> t = tape.leaf(*a, true);
    out.param_nodes.emplace_back(name, t);
    return t;
  };

  auto drop = [&](Tensor<T> x) {
    if (!use_dropout) return x;
    return mask_mul(x, detail::dropout_mask_array<T>(x.shape(), cfg.dropout, *dropout_rng));
  };

  Tensor<T> tok_table = bind("embeddings.token");
  Tensor<T> pos_table = bind("embeddings.position");
  std::vector<int> positions(static_cast<size_t>(B) * static_cast<size_t>(L));
  for (int b = 0; b < B; ++b)
    for (int l = 0; l < L; ++l) positions[static_cast<size_t>(b * L + l)] = l;

  Tensor<T> x2d = add(take_rows(tok_table, batch.ids), take_rows(pos_table, positions));
  x2d = layer_norm(x2d, bind("embeddings.ln.gamma"), bind("embeddings.ln.beta"));
  x2d = drop(x2d);
  Tensor<T> x = reshape(x2d, {B, L, H});

  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(H / cfg.heads));

  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    const bool last = l == cfg.layers - 1;

    Tensor<T> flat = reshape(x, {B * L, H});
    Tensor<T> q = split_heads(reshape(add_bias(matmul(flat, bind(p + "attn.wq")), bind(p + "attn.bq")), {B, L, H}), cfg.heads);
    Tensor<T> k = split_heads(reshape(add_bias(matmul(flat, bind(p + "attn.wk")), bind(p + "attn.bk")), {B, L, H}), cfg.heads);
    Tensor<T> v = split_heads(reshape(add_bias(matmul(flat, bind(p + "attn.wv")), bind(p + "attn.bv")), {B, L, H}), cfg.heads);

    Tensor<T> scores = scale(matmul(q, transpose_last2(k)), inv_sqrt_dh);
    Tensor<T> attn = softmax(masked_add(scores, batch.pad_mask), -1);
    Tensor<T> blended = attn;
    if (cfg.sla_enabled) {
      Tensor<T> local = softmax(masked_add(scores, batch.local_mask), -1);
      Tensor<T> gate = sigmoid(reshape(add_bias(matmul(flat, bind(p + "attn.gate.w")), bind(p + "attn.gate.b")), {B, L}));
      blended = gate_mix(attn, local, gate);
      out.gates.push_back(gate);
      if (last) {
        out.attn_local = local;
        out.attn_interp = blended;
      }
    }
    if (last) out.attn_global = attn;

    Tensor<T> ctx = reshape(merge_heads(matmul(blended, v)), {B * L, H});
    Tensor<T> attn_out = drop(add_bias(matmul(ctx, bind(p + "attn.wo")), bind(p + "attn.bo")));
    Tensor<T> x1 = layer_norm(add(reshape(x, {B * L, H}), attn_out), bind(p + "ln1.gamma"), bind(p + "ln1.beta"));

    Tensor<T> f = gelu(add_bias(matmul(x1, bind(p + "ffn.w1")), bind(p + "ffn.b1")));
    Tensor<T> f2 = drop(add_bias(matmul(f, bind(p + "ffn.w2")), bind(p + "ffn.b2")));
    Tensor<T> x2 = layer_norm(add(x1, f2), bind(p + "ln2.gamma"), bind(p + "ln2.beta"));
    x = reshape(x2, {B, L, H});
  }

  out.hidden = x;
  Tensor<T> z2d = reshape(x, {B * L, H});

  Tensor<T> mlm_t = layer_norm(gelu(add_bias(matmul(z2d, bind("mlm.dense.w")), bind("mlm.dense.b"))),
                               bind("mlm.ln.gamma"), bind("mlm.ln.beta"));
  out.mlm_logits = add_bias(matmul(mlm_t, transpose_last2(tok_table)), bind("mlm.bias"));
  out.pos_logits = add_bias(matmul(z2d, bind("pos_head.w")), bind("pos_head.b"));
  return out;
}

// Additive key-padding mask for one batch: row i of sentence b sees only
// columns j < lengths[b].
template <typename T>
Array<T> pad_mask_array(const std::vector<int>& lengths, int seq) {
  const int B = static_cast<int>(lengths.size());
  Array<T> mask({B, seq, seq});
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < seq; ++i)
      for (int j = 0; j < seq; ++j)
        mask[(static_cast<int64_t>(b) * seq + i) * seq + j] =
            j < lengths[static_cast<size_t>(b)] ? T(0) : static_cast<T>(kNegInf);
  return mask;
}

}  // namespace treelm
