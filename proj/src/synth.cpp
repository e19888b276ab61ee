#include "treelm/synth.hpp"

#include "treelm/rng.hpp"

namespace treelm {

namespace {

struct Token {
  std::string form;
  std::string upos;
  int head = 0;  // filled after positions are final (1-based)
  std::string deprel;
  int head_slot = -1;  // index into the token list before positions exist
};

const std::vector<std::string>& nouns() {
  static const std::vector<std::string> w = {"fox",  "dog",   "farmer", "river", "stone",
                                             "bird", "garden", "wolf",   "child", "market",
                                             "road", "tree",   "boat",   "hill"};
  return w;
}
const std::vector<std::string>& verbs() {
  static const std::vector<std::string> w = {"sees",    "chases", "finds",   "likes",  "follows",
                                             "watches", "carries", "paints", "greets", "avoids"};
  return w;
}
const std::vector<std::string>& dets() {
  static const std::vector<std::string> w = {"the", "a", "every", "this", "some"};
  return w;
}
const std::vector<std::string>& adjs() {
  static const std::vector<std::string> w = {"old",   "small", "quick", "bright",
                                             "quiet", "heavy", "green", "tall"};
  return w;
}
const std::vector<std::string>& advs() {
  static const std::vector<std::string> w = {"often", "quietly", "soon", "never", "slowly", "again"};
  return w;
}
const std::vector<std::string>& adps() {
  static const std::vector<std::string> w = {"near", "under", "behind", "beside", "across"};
  return w;
}

// Zipf-flavored pick: weight 1/(rank+1).
const std::string& pick(Rng& rng, const std::vector<std::string>& words) {
  double total = 0.0;
  for (size_t i = 0; i < words.size(); ++i) total += 1.0 / static_cast<double>(i + 1);
  double u = rng.next_double() * total;
  for (size_t i = 0; i < words.size(); ++i) {
    u -= 1.0 / static_cast<double>(i + 1);
    if (u <= 0.0) return words[i];
  }
  return words.back();
}

// Emits a noun phrase, returns the slot of its head noun.
int emit_np(Rng& rng, std::vector<Token>& out, bool allow_pp) {
  const int first_pre = static_cast<int>(out.size());
  if (rng.bernoulli(0.85)) out.push_back({pick(rng, dets()), "DET", 0, "det", -1});
  if (rng.bernoulli(0.4)) out.push_back({pick(rng, adjs()), "ADJ", 0, "amod", -1});
  const int head_slot = static_cast<int>(out.size());
  out.push_back({pick(rng, nouns()), "NOUN", 0, "", -1});
  for (int i = first_pre; i < head_slot; ++i) out[static_cast<size_t>(i)].head_slot = head_slot;
  if (allow_pp && rng.bernoulli(0.15)) {
    const int adp_slot = static_cast<int>(out.size());
    out.push_back({pick(rng, adps()), "ADP", 0, "case", -1});
    const int inner = emit_np(rng, out, false);
    out[static_cast<size_t>(adp_slot)].head_slot = inner;
    out[static_cast<size_t>(inner)].deprel = "nmod";
    out[static_cast<size_t>(inner)].head_slot = head_slot;
  }
  return head_slot;
}

}  // namespace

std::vector<RawSentence> generate_sentences(const SynthOptions& options) {
  std::vector<RawSentence> sentences;
  Rng rng(stream_hash(options.seed, "synth"));
  for (int idx = 0; idx < options.num_sentences; ++idx) {
    std::vector<Token> toks;

    const int subj = emit_np(rng, toks, true);
    if (rng.bernoulli(0.25)) toks.push_back({pick(rng, advs()), "ADV", 0, "advmod", -1});
    const int verb = static_cast<int>(toks.size());
    toks.push_back({pick(rng, verbs()), "VERB", 0, "root", -1});
    toks[static_cast<size_t>(subj)].deprel = "nsubj";
    toks[static_cast<size_t>(subj)].head_slot = verb;
    for (auto& t : toks)
      if (t.upos == "ADV" && t.head_slot < 0) t.head_slot = verb;

    if (rng.bernoulli(0.65)) {
      const int obj = emit_np(rng, toks, true);
      toks[static_cast<size_t>(obj)].deprel = "obj";
      toks[static_cast<size_t>(obj)].head_slot = verb;
    }
    if (rng.bernoulli(0.35)) {
      const int adp_slot = static_cast<int>(toks.size());
      toks.push_back({pick(rng, adps()), "ADP", 0, "case", -1});
      const int obl = emit_np(rng, toks, false);
      toks[static_cast<size_t>(adp_slot)].head_slot = obl;
      toks[static_cast<size_t>(obl)].deprel = "obl";
      toks[static_cast<size_t>(obl)].head_slot = verb;
    }
    toks.push_back({".", "PUNCT", 0, "punct", verb});

    RawSentence s;
    s.sent_id = "synth-" + std::to_string(idx);
    for (size_t i = 0; i < toks.size(); ++i) {
      s.forms.push_back(toks[i].form);
      s.upos.push_back(toks[i].upos);
      s.deprels.push_back(toks[i].deprel.empty() ? "dep" : toks[i].deprel);
      s.heads.push_back(toks[i].head_slot < 0 ? 0 : toks[i].head_slot + 1);
    }
    sentences.push_back(std::move(s));
  }
  return sentences;
}

std::string generate_conllu(const SynthOptions& options) {
  return to_conllu(generate_sentences(options));
}

}  // namespace treelm
