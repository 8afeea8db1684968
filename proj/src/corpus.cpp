#include "igt/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "igt/rng.hpp"
#include "json.hpp"

namespace igt {

namespace {

using nlohmann::json;

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

std::string lowercase(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  return f;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for reading: " + path);
  return f;
}

}  // namespace

int Vocab::id_of(const std::string& token) const {
  auto it = token_to_id.find(token);
  return it == token_to_id.end() ? kUnkId : it->second;
}

const std::string& Vocab::token_of(int id) const {
  if (id < 0 || id >= size()) {
    throw std::out_of_range("vocab: id " + std::to_string(id) + " outside [0," +
                            std::to_string(size()) + ")");
  }
  return id_to_token[static_cast<std::size_t>(id)];
}

void CorpusSpec::validate() const {
  if (domains.empty()) throw std::invalid_argument("corpus spec: no domains");
  for (const auto& d : domains) {
    if (d.name.empty()) throw std::invalid_argument("corpus spec: unnamed domain");
    if (d.content_lexicon.empty()) {
      throw std::invalid_argument("corpus spec: empty lexicon in domain " + d.name);
    }
    if (d.templates.empty()) {
      throw std::invalid_argument("corpus spec: no templates in domain " + d.name);
    }
    if (d.weight <= 0.0) {
      throw std::invalid_argument("corpus spec: non-positive weight in domain " + d.name);
    }
  }
  for (const auto& b : bridge_words) {
    int hits = 0;
    for (const auto& d : domains) {
      if (std::find(d.content_lexicon.begin(), d.content_lexicon.end(), b) !=
          d.content_lexicon.end()) {
        ++hits;
      }
    }
    if (hits < 2) {
      throw std::invalid_argument("corpus spec: bridge word '" + b +
                                  "' appears in fewer than two domain lexicons");
    }
  }
  if (doc_count < 0) throw std::invalid_argument("corpus spec: negative doc_count");
  if (doc_length < 1) throw std::invalid_argument("corpus spec: doc_length < 1");
  if (bridge_prob < 0.0 || bridge_prob > 1.0) {
    throw std::invalid_argument("corpus spec: bridge_prob outside [0,1]");
  }
  if (max_vocab < 4) throw std::invalid_argument("corpus spec: max_vocab < 4");
  if (val_fraction < 0.0 || val_fraction >= 1.0) {
    throw std::invalid_argument("corpus spec: val_fraction outside [0,1)");
  }
}

CorpusSpec CorpusSpec::from_json(const std::string& json_text) {
  json j = json::parse(json_text);
  CorpusSpec spec;
  spec.domains.clear();
  for (const auto& jd : j.at("domains")) {
    DomainSpec d;
    d.name = jd.at("name").get<std::string>();
    d.weight = jd.value("weight", 1.0);
    d.content_lexicon = jd.at("content_lexicon").get<std::vector<std::string>>();
    d.templates = jd.at("templates").get<std::vector<std::string>>();
    spec.domains.push_back(std::move(d));
  }
  spec.bridge_words = j.value("bridge_words", std::vector<std::string>{});
  spec.glue_words = j.value("glue_words", std::vector<std::string>{});
  spec.doc_count = j.value("doc_count", spec.doc_count);
  spec.doc_length = j.value("doc_length", spec.doc_length);
  spec.bridge_prob = j.value("bridge_prob", spec.bridge_prob);
  spec.seed = j.value("seed", spec.seed);
  spec.max_vocab = j.value("max_vocab", spec.max_vocab);
  spec.val_fraction = j.value("val_fraction", spec.val_fraction);
  spec.validate();
  return spec;
}

std::string CorpusSpec::to_json() const {
  json j;
  j["domains"] = json::array();
  for (const auto& d : domains) {
    j["domains"].push_back({{"name", d.name},
                            {"weight", d.weight},
                            {"content_lexicon", d.content_lexicon},
                            {"templates", d.templates}});
  }
  j["bridge_words"] = bridge_words;
  j["glue_words"] = glue_words;
  j["doc_count"] = doc_count;
  j["doc_length"] = doc_length;
  j["bridge_prob"] = bridge_prob;
  j["seed"] = seed;
  j["max_vocab"] = max_vocab;
  j["val_fraction"] = val_fraction;
  return j.dump(2);
}

CorpusSpec default_bridge_spec() {
  CorpusSpec spec;
  spec.domains = {
      DomainSpec{
          "wildlife",
          1.0,
          {"bat", "cave", "wings", "mammal", "fur", "insects", "moths", "echoes",
           "colony", "roost", "prey", "dusk", "burrow", "river"},
          {
              "the {w} flew out of the {w} and over the {w}",
              "a {w} with {w} hunted {w} near the {w}",
              "the {w} of the {w} heard {w} in the {w}",
              "at {w} the {w} left the {w} to find {w}",
              "the {w} returned to the {w} and fed on {w}",
              "deep in the {w} the {w} raised its {w}",
          },
      },
      DomainSpec{
          "comics",
          1.0,
          {"bat", "batman", "gotham", "joker", "cape", "signal", "rooftop",
           "villain", "hero", "crime", "mask", "alley", "batmobile", "vigilante"},
          {
              "the bat {w} glowed over the {w} of {w}",
              "the {w} saw the bat and called the {w} of {w}",
              "a {w} in a {w} fought {w} in the {w}",
              "the {w} chased the {w} across the {w} at night",
              "the {w} of {w} feared the {w} and the {w}",
              "night fell on {w} and the {w} wore a {w}",
          },
      },
  };
  spec.bridge_words = {"bat"};
  spec.glue_words = {"the", "a",  "of", "in",  "and", "at",   "on",
                     "to",  "it", "was", "near", "over", "out", "its"};
  spec.doc_count = 3000;
  spec.doc_length = 42;
  spec.bridge_prob = 0.12;
  spec.seed = 1234;
  spec.max_vocab = 512;
  spec.val_fraction = 0.05;
  return spec;
}

std::vector<Document> generate_documents(const CorpusSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  // Per-domain bridge candidates: bridge words present in that lexicon.
  std::vector<std::vector<std::string>> domain_bridges(spec.domains.size());
  for (std::size_t di = 0; di < spec.domains.size(); ++di) {
    for (const auto& b : spec.bridge_words) {
      const auto& lex = spec.domains[di].content_lexicon;
      if (std::find(lex.begin(), lex.end(), b) != lex.end()) {
        domain_bridges[di].push_back(b);
      }
    }
  }
  double total_weight = 0.0;
  for (const auto& d : spec.domains) total_weight += d.weight;

  std::vector<Document> docs;
  docs.reserve(static_cast<std::size_t>(spec.doc_count));
  for (int n = 0; n < spec.doc_count; ++n) {
    double r = rng.uniform() * total_weight;
    std::size_t di = 0;
    for (; di + 1 < spec.domains.size(); ++di) {
      r -= spec.domains[di].weight;
      if (r < 0.0) break;
    }
    const DomainSpec& dom = spec.domains[di];
    std::vector<std::string> words;
    while (static_cast<int>(words.size()) < spec.doc_length) {
      const std::string& tmpl =
          dom.templates[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(dom.templates.size())))];
      for (const auto& tok : split_words(tmpl)) {
        if (tok == "{w}") {
          if (!domain_bridges[di].empty() && rng.uniform() < spec.bridge_prob) {
            words.push_back(domain_bridges[di][static_cast<std::size_t>(
                rng.uniform_int(static_cast<int>(domain_bridges[di].size())))]);
          } else {
            words.push_back(dom.content_lexicon[static_cast<std::size_t>(
                rng.uniform_int(static_cast<int>(dom.content_lexicon.size())))]);
          }
        } else {
          words.push_back(tok);
        }
      }
    }
    words.resize(static_cast<std::size_t>(spec.doc_length));
    std::string text;
    for (std::size_t i = 0; i < words.size(); ++i) {
      if (i) text += ' ';
      text += words[i];
    }
    docs.push_back(Document{std::move(text), static_cast<int>(di)});
  }
  return docs;
}

Vocab build_vocab(const std::vector<Document>& docs, int max_vocab) {
  Vocab v;
  v.id_to_token = {"<unk>", "<bos>", "<pad>"};
  v.token_to_id = {{"<unk>", kUnkId}, {"<bos>", kBosId}, {"<pad>", kPadId}};
  for (const auto& doc : docs) {
    for (const auto& w : split_words(doc.text)) {
      const std::string word = lowercase(w);
      if (v.token_to_id.contains(word)) continue;
      if (v.size() >= max_vocab) {
        throw std::invalid_argument("build_vocab: vocabulary exceeds max of " +
                                    std::to_string(max_vocab));
      }
      v.token_to_id.emplace(word, v.size());
      v.id_to_token.push_back(word);
    }
  }
  return v;
}

std::vector<int> tokenize(const std::string& text, const Vocab& vocab) {
  std::vector<int> ids;
  for (const auto& w : split_words(text)) ids.push_back(vocab.id_of(lowercase(w)));
  return ids;
}

std::string detokenize(std::span<const int> ids, const Vocab& vocab) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += vocab.token_of(ids[i]);
  }
  return out;
}

Corpus generate_corpus(const CorpusSpec& spec) {
  Corpus c;
  c.spec = spec;
  c.docs = generate_documents(spec);
  c.vocab = build_vocab(c.docs, spec.max_vocab);
  c.tokens.reserve(c.docs.size());
  for (const auto& d : c.docs) c.tokens.push_back(tokenize(d.text, c.vocab));

  // Seeded 95/5-style split by document.
  std::vector<int> order(c.docs.size());
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(split_rng.uniform_int(static_cast<int>(i)));
    std::swap(order[i - 1], order[j]);
  }
  const int n_val = c.docs.empty()
                        ? 0
                        : std::max(spec.val_fraction > 0.0 ? 1 : 0,
                                   static_cast<int>(spec.val_fraction *
                                                    static_cast<double>(c.docs.size())));
  c.val_docs.assign(order.begin(), order.begin() + n_val);
  c.train_docs.assign(order.begin() + n_val, order.end());
  std::sort(c.val_docs.begin(), c.val_docs.end());
  std::sort(c.train_docs.begin(), c.train_docs.end());
  return c;
}

int default_stopword_n(int vocab_size) {
  const int two_pct = (vocab_size * 2 + 99) / 100;  // ceil(0.02 * V)
  return std::max(16, two_pct);
}

StopwordList build_stopwords(const Corpus& corpus, int n) {
  if (n < 0 || n >= corpus.vocab.size()) {
    throw std::invalid_argument("build_stopwords: n=" + std::to_string(n) +
                                " must be in [0, V=" + std::to_string(corpus.vocab.size()) + ")");
  }
  std::vector<std::int64_t> freq(static_cast<std::size_t>(corpus.vocab.size()), 0);
  for (int di : corpus.train_docs) {
    for (int id : corpus.tokens[static_cast<std::size_t>(di)]) {
      ++freq[static_cast<std::size_t>(id)];
    }
  }
  std::vector<int> ids(freq.size());
  std::iota(ids.begin(), ids.end(), 0);
  std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) {
    if (freq[static_cast<std::size_t>(a)] != freq[static_cast<std::size_t>(b)]) {
      return freq[static_cast<std::size_t>(a)] > freq[static_cast<std::size_t>(b)];
    }
    return a < b;
  });
  StopwordList sw;
  sw.n = n;
  for (int i = 0; i < n; ++i) sw.ids.insert(ids[static_cast<std::size_t>(i)]);
  sw.ids.insert(kUnkId);
  sw.ids.insert(kBosId);
  sw.ids.insert(kPadId);
  return sw;
}

void save_corpus_txt(const std::string& path, const std::vector<Document>& docs,
                     std::span<const int> doc_indices) {
  auto f = open_out(path);
  for (int i : doc_indices) f << docs[static_cast<std::size_t>(i)].text << '\n';
}

std::vector<std::string> load_corpus_txt(const std::string& path) {
  auto f = open_in(path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

void save_vocab_json(const std::string& path, const Vocab& vocab) {
  json j = json::object();
  for (int i = 0; i < vocab.size(); ++i) j[vocab.token_of(i)] = i;
  open_out(path) << j.dump(2) << '\n';
}

Vocab load_vocab_json(const std::string& path) {
  json j = json::parse(open_in(path));
  Vocab v;
  v.id_to_token.resize(j.size());
  for (auto it = j.begin(); it != j.end(); ++it) {
    const int id = it.value().get<int>();
    if (id < 0 || id >= static_cast<int>(j.size())) {
      throw std::runtime_error("vocab json: id out of range for " + it.key());
    }
    v.id_to_token[static_cast<std::size_t>(id)] = it.key();
    v.token_to_id[it.key()] = id;
  }
  if (v.size() < 3 || v.id_to_token[0] != "<unk>" || v.id_to_token[1] != "<bos>" ||
      v.id_to_token[2] != "<pad>") {
    throw std::runtime_error("vocab json: special tokens missing or misplaced");
  }
  return v;
}

void save_stopwords_json(const std::string& path, const StopwordList& sw, const Vocab& vocab) {
  json j;
  j["n"] = sw.n;
  j["ids"] = std::vector<int>(sw.ids.begin(), sw.ids.end());
  std::vector<std::string> tokens;
  tokens.reserve(sw.ids.size());
  for (int id : sw.ids) tokens.push_back(vocab.token_of(id));
  j["tokens"] = tokens;
  open_out(path) << j.dump(2) << '\n';
}

StopwordList load_stopwords_json(const std::string& path) {
  json j = json::parse(open_in(path));
  StopwordList sw;
  sw.n = j.at("n").get<int>();
  for (int id : j.at("ids").get<std::vector<int>>()) sw.ids.insert(id);
  return sw;
}

void save_corpus_dir(const std::string& dir, const Corpus& corpus, const StopwordList& sw) {
  const std::filesystem::path p(dir);
  std::filesystem::create_directories(p);
  open_out((p / "corpus_spec.json").string()) << corpus.spec.to_json() << '\n';
  save_corpus_txt((p / "corpus_train.txt").string(), corpus.docs, corpus.train_docs);
  save_corpus_txt((p / "corpus_val.txt").string(), corpus.docs, corpus.val_docs);
  save_vocab_json((p / "vocab.json").string(), corpus.vocab);
  save_stopwords_json((p / "stopwords.json").string(), sw, corpus.vocab);
}

Corpus load_corpus_dir(const std::string& dir) {
  const std::filesystem::path p(dir);
  std::ostringstream spec_text;
  spec_text << open_in((p / "corpus_spec.json").string()).rdbuf();
  Corpus c;
  c.spec = CorpusSpec::from_json(spec_text.str());
  c.vocab = load_vocab_json((p / "vocab.json").string());
  const auto train_lines = load_corpus_txt((p / "corpus_train.txt").string());
  const auto val_lines = load_corpus_txt((p / "corpus_val.txt").string());
  for (const auto& line : train_lines) {
    c.train_docs.push_back(static_cast<int>(c.docs.size()));
    c.docs.push_back(Document{line, -1});  // domain labels are not persisted
    c.tokens.push_back(tokenize(line, c.vocab));
  }
  for (const auto& line : val_lines) {
    c.val_docs.push_back(static_cast<int>(c.docs.size()));
    c.docs.push_back(Document{line, -1});
    c.tokens.push_back(tokenize(line, c.vocab));
  }
  return c;
}

}  // namespace igt
