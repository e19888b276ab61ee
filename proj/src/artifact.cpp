#include "treelm/artifact.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace treelm {

using nlohmann::json;

CorpusArtifact preprocess_corpus(const std::vector<RawSentence>& sentences, const Vocabulary& vocab,
                                 const PreprocessParams& params, PreprocessStats* stats) {
  CorpusArtifact artifact;
  artifact.params = params;
  artifact.vocab_size = vocab.size();
  PreprocessStats local;
  PreprocessStats& st = stats ? *stats : local;
  st.input_sentences = static_cast<int>(sentences.size());

  for (const RawSentence& raw : sentences) {
    SentenceRecord rec;
    rec.sentence = align(raw, vocab);
    if (rec.sentence.num_subwords() > params.max_len) {
      ++st.dropped_too_long;
      st.diagnostics.push_back({0, raw.sent_id,
                                "dropped: " + std::to_string(rec.sentence.num_subwords()) +
                                    " subwords exceed max_len " + std::to_string(params.max_len)});
      continue;
    }
    rec.distances = tree_distances(rec.sentence);
    rec.mask = sla_mask(rec.distances, params.delta);
    Rng rng(stream_hash(params.seed, raw.sent_id));
    rec.phrases = sample_phrases(rec.sentence, rng, params.k_neg, params.sets_per_sentence);
    rec.trees = sample_trees(rec.sentence, rng, params.max_tokens, params.sets_per_sentence);
    artifact.records.push_back(std::move(rec));
    ++st.kept;
  }
  return artifact;
}

namespace {

json sample_to_json(const PhraseSample& s) {
  return json{{"anchor", s.anchor},
              {"positive", s.positive},
              {"ancestor", s.ancestor},
              {"negatives", s.negatives}};
}

json sample_to_json(const TreeSample& s) {
  json negs = json::array();
  for (const auto& n : s.negatives)
    negs.push_back(json{{"sub_root", n.substituted_root}, {"removed", n.removed}, {"tokens", n.tokens}});
  return json{{"root", s.root}, {"positive", s.positive_tree}, {"negatives", negs}};
}

std::vector<std::string> mask_rows(const SlaMask& m) {
  std::vector<std::string> rows;
  rows.reserve(static_cast<size_t>(m.n));
  for (int i = 0; i < m.n; ++i) {
    std::string row(static_cast<size_t>(m.n), '0');
    for (int j = 0; j < m.n; ++j)
      if (m.is_local(i, j)) row[static_cast<size_t>(j)] = '1';
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

std::string artifact_to_jsonl(const CorpusArtifact& artifact) {
  std::ostringstream out;
  json header{{"format", "treelm-corpus"},
              {"version", 1},
              {"seed", artifact.params.seed},
              {"delta", artifact.params.delta},
              {"k_neg", artifact.params.k_neg},
              {"sets_per_sentence", artifact.params.sets_per_sentence},
              {"max_tokens", artifact.params.max_tokens},
              {"max_len", artifact.params.max_len},
              {"vocab_size", artifact.vocab_size}};
  out << header.dump() << "\n";

  for (const SentenceRecord& rec : artifact.records) {
    const int n = rec.distances.n;
    json dist = json::array();
    for (int i = 0; i < n; ++i) {
      json row = json::array();
      for (int j = 0; j < n; ++j) row.push_back(rec.distances.at(i, j));
      dist.push_back(std::move(row));
    }
    json phrases = json::array();
    for (const auto& s : rec.phrases) phrases.push_back(sample_to_json(s));
    json trees = json::array();
    for (const auto& s : rec.trees) trees.push_back(sample_to_json(s));
    json line{{"sent_id", rec.sentence.raw.sent_id},
              {"forms", rec.sentence.raw.forms},
              {"upos", rec.sentence.raw.upos},
              {"heads", rec.sentence.raw.heads},
              {"deprels", rec.sentence.raw.deprels},
              {"subword_ids", rec.sentence.subword_ids},
              {"word_of_subword", rec.sentence.word_of_subword},
              {"effective_heads", rec.sentence.effective_heads},
              {"distances", dist},
              {"mask", mask_rows(rec.mask)},
              {"phrase_samples", phrases},
              {"tree_samples", trees}};
    out << line.dump() << "\n";
  }
  return out.str();
}

CorpusArtifact artifact_from_jsonl(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("corpus artifact: empty file");
  json header = json::parse(line);
  if (header.value("format", "") != "treelm-corpus")
    throw std::runtime_error("corpus artifact: unrecognized format header");
  if (header.value("version", 0) != 1)
    throw std::runtime_error("corpus artifact: unsupported version");

  CorpusArtifact artifact;
  artifact.params.seed = header.at("seed").get<uint64_t>();
  artifact.params.delta = header.at("delta").get<int>();
  artifact.params.k_neg = header.at("k_neg").get<int>();
  artifact.params.sets_per_sentence = header.at("sets_per_sentence").get<int>();
  artifact.params.max_tokens = header.at("max_tokens").get<int>();
  artifact.params.max_len = header.at("max_len").get<int>();
  artifact.vocab_size = header.at("vocab_size").get<int>();

  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = json::parse(line);
    SentenceRecord rec;
    rec.sentence.raw.sent_id = j.at("sent_id").get<std::string>();
    rec.sentence.raw.forms = j.at("forms").get<std::vector<std::string>>();
    rec.sentence.raw.upos = j.at("upos").get<std::vector<std::string>>();
    rec.sentence.raw.heads = j.at("heads").get<std::vector<int>>();
    rec.sentence.raw.deprels = j.at("deprels").get<std::vector<std::string>>();
    rec.sentence.subword_ids = j.at("subword_ids").get<std::vector<int>>();
    rec.sentence.word_of_subword = j.at("word_of_subword").get<std::vector<int>>();
    rec.sentence.effective_heads = j.at("effective_heads").get<std::vector<int>>();

    const auto dist = j.at("distances");
    const int n = static_cast<int>(dist.size());
    if (n != rec.sentence.num_subwords())
      throw std::runtime_error("corpus artifact line " + std::to_string(line_no) +
                               ": distance matrix size mismatch");
    rec.distances.n = n;
    rec.distances.d.resize(static_cast<size_t>(n) * static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
      for (int j2 = 0; j2 < n; ++j2) rec.distances.at(i, j2) = dist.at(static_cast<size_t>(i)).at(static_cast<size_t>(j2)).get<int>();

    rec.mask = sla_mask(rec.distances, artifact.params.delta);
    const auto stored = j.at("mask").get<std::vector<std::string>>();
    for (int i = 0; i < n; ++i)
      for (int j2 = 0; j2 < n; ++j2) {
        const bool bit = stored.at(static_cast<size_t>(i)).at(static_cast<size_t>(j2)) == '1';
        if (bit != rec.mask.is_local(i, j2))
          throw std::runtime_error("corpus artifact line " + std::to_string(line_no) +
                                   ": stored mask disagrees with distances at (" +
                                   std::to_string(i) + "," + std::to_string(j2) + ")");
      }

    for (const auto& p : j.at("phrase_samples")) {
      PhraseSample s;
      s.anchor = p.at("anchor").get<int>();
      s.positive = p.at("positive").get<int>();
      s.ancestor = p.at("ancestor").get<int>();
      s.negatives = p.at("negatives").get<std::vector<int>>();
      rec.phrases.push_back(std::move(s));
    }
    for (const auto& t : j.at("tree_samples")) {
      TreeSample s;
      s.root = t.at("root").get<int>();
      s.positive_tree = t.at("positive").get<std::vector<int>>();
      for (const auto& ng : t.at("negatives")) {
        TreeSample::Negative neg;
        neg.substituted_root = ng.at("sub_root").get<int>();
        neg.removed = ng.at("removed").get<int>();
        neg.tokens = ng.at("tokens").get<std::vector<int>>();
        s.negatives.push_back(std::move(neg));
      }
      rec.trees.push_back(std::move(s));
    }
    artifact.records.push_back(std::move(rec));
  }
  return artifact;
}

void save_artifact(const CorpusArtifact& artifact, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write corpus artifact: " + path);
  out << artifact_to_jsonl(artifact);
}

CorpusArtifact load_artifact(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open corpus artifact: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return artifact_from_jsonl(buf.str());
}

}  // namespace treelm
