#pragma once

#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace igt {

// Special token ids are fixed by the file format.
inline constexpr int kUnkId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kPadId = 2;

struct Vocab {
  std::unordered_map<std::string, int> token_to_id;
  std::vector<std::string> id_to_token;

  int size() const { return static_cast<int>(id_to_token.size()); }
  int id_of(const std::string& token) const;  // kUnkId when unseen
  const std::string& token_of(int id) const;
};

struct DomainSpec {
  std::string name;
  double weight = 1.0;  // relative draw probability for documents
  std::vector<std::string> content_lexicon;
  std::vector<std::string> templates;  // "{w}" marks a content-word slot
};

// Synthetic multi-domain corpus description. Bridge words must appear in at
// least two domain lexicons; glue words appear in every domain's templates.
struct CorpusSpec {
  std::vector<DomainSpec> domains;
  std::vector<std::string> bridge_words;
  std::vector<std::string> glue_words;
  int doc_count = 2000;
  int doc_length = 48;          // target words per document
  double bridge_prob = 0.1;     // chance a content slot is forced to a bridge word
  std::uint64_t seed = 1234;
  int max_vocab = 512;
  double val_fraction = 0.05;

  static CorpusSpec from_json(const std::string& json_text);
  std::string to_json() const;
  void validate() const;  // throws std::invalid_argument
};

// The default two-domain bridge corpus used by the drift experiment: a
// wildlife domain and a comics domain sharing the bridge word "bat".
CorpusSpec default_bridge_spec();

struct Document {
  std::string text;  // lowercase whitespace-delimited words
  int domain = 0;
};

struct StopwordList {
  std::set<int> ids;
  int n = 0;  // requested count, excluding the always-included specials
};

struct Corpus {
  CorpusSpec spec;
  std::vector<Document> docs;
  Vocab vocab;
  std::vector<std::vector<int>> tokens;  // per doc, no BOS
  std::vector<int> train_docs;           // indices into docs/tokens
  std::vector<int> val_docs;
};

// Word-level generation pipeline; fully determined by (spec, spec.seed).
std::vector<Document> generate_documents(const CorpusSpec& spec);
Vocab build_vocab(const std::vector<Document>& docs, int max_vocab);
std::vector<int> tokenize(const std::string& text, const Vocab& vocab);
std::string detokenize(std::span<const int> ids, const Vocab& vocab);
Corpus generate_corpus(const CorpusSpec& spec);

// Exactly the n most frequent token ids of the training split (ties broken
// by ascending id), plus the special ids.
StopwordList build_stopwords(const Corpus& corpus, int n);
int default_stopword_n(int vocab_size);

// Persistence: one document per line / {token: id} JSON.
void save_corpus_txt(const std::string& path, const std::vector<Document>& docs,
                     std::span<const int> doc_indices);
std::vector<std::string> load_corpus_txt(const std::string& path);
void save_vocab_json(const std::string& path, const Vocab& vocab);
Vocab load_vocab_json(const std::string& path);
void save_stopwords_json(const std::string& path, const StopwordList& sw, const Vocab& vocab);
StopwordList load_stopwords_json(const std::string& path);

// Corpus directory layout: corpus_spec.json, corpus_train.txt,
// corpus_val.txt, vocab.json, stopwords.json.
void save_corpus_dir(const std::string& dir, const Corpus& corpus, const StopwordList& sw);
Corpus load_corpus_dir(const std::string& dir);

}  // namespace igt
