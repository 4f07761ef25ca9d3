#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "ragctl/corpus.hpp"
#include "ragctl/util.hpp"

namespace ragctl {

// Okapi parameters. The canonical defaults; not exposed as knobs.
inline constexpr double kBm25K1 = 1.5;
inline constexpr double kBm25B = 0.75;

// Lowercase terms split on any non-alphanumeric byte. No stemming, no
// stopword removal.
inline std::vector<std::string> tokenize(std::string_view s) {
  std::vector<std::string> terms;
  std::string cur;
  for (unsigned char c : s) {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      terms.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) terms.push_back(std::move(cur));
  return terms;
}

struct Posting {
  int doc_id = 0;
  int tf = 0;
};

struct InvertedIndex {
  std::unordered_map<std::string, int> vocabulary;             // term -> df
  std::unordered_map<std::string, std::vector<Posting>> postings;  // doc id ascending
  std::vector<int> doc_lengths;
  double avg_doc_length = 0.0;
  int num_docs = 0;

  double idf(std::string_view term) const {
    auto it = vocabulary.find(std::string(term));
    if (it == vocabulary.end()) return 0.0;
    const double df = it->second;
    return std::log(1.0 + (num_docs - df + 0.5) / (df + 0.5));
  }

  void validate() const {
    if (num_docs != static_cast<int>(doc_lengths.size()))
      throw validation_error("index: num_docs does not match doc_lengths");
    if (num_docs > 0 && !(avg_doc_length > 0.0))
      throw validation_error("index: avg_doc_length must be positive");
    for (const auto& [term, df] : vocabulary) {
      auto it = postings.find(term);
      if (it == postings.end() || static_cast<int>(it->second.size()) != df)
        throw validation_error("index: df mismatch for term '" + term + "'");
    }
    if (vocabulary.size() != postings.size())
      throw validation_error("index: vocabulary/postings key sets differ");
  }
};

struct RetrievalResult {
  std::vector<int> doc_ids;     // best first; ties by ascending doc id
  std::vector<double> scores;   // non-increasing, parallel to doc_ids

  std::size_t size() const { return doc_ids.size(); }
  bool empty() const { return doc_ids.empty(); }
};

inline InvertedIndex build_index(const std::vector<Paragraph>& paragraphs) {
  if (paragraphs.empty())
    throw validation_error("build_index: corpus must be non-empty");
  InvertedIndex index;
  index.num_docs = static_cast<int>(paragraphs.size());
  index.doc_lengths.reserve(paragraphs.size());
  long long total_len = 0;
  for (const auto& p : paragraphs) {
    const auto terms = tokenize(p.text);
    index.doc_lengths.push_back(static_cast<int>(terms.size()));
    total_len += static_cast<long long>(terms.size());
    std::unordered_map<std::string, int> tf;
    for (const auto& t : terms) ++tf[t];
    // Insert in sorted term order so postings construction is
    // independent of hash-map iteration order.
    std::vector<const std::string*> keys;
    keys.reserve(tf.size());
    for (const auto& [term, count] : tf) keys.push_back(&term);
    std::sort(keys.begin(), keys.end(),
              [](const std::string* a, const std::string* b) { return *a < *b; });
    for (const std::string* term : keys) {
      index.postings[*term].push_back(Posting{p.id, tf[*term]});
      ++index.vocabulary[*term];
    }
  }
  index.avg_doc_length =
      static_cast<double>(total_len) / static_cast<double>(index.num_docs);
  index.validate();
  return index;
}

// BM25 score of one document for a term sequence. Repeated query terms
// contribute once per occurrence. Zero when no query term occurs in the
// document; always finite and non-negative.
inline double score_bm25(const InvertedIndex& index,
                         const std::vector<std::string>& query_terms,
                         int doc_id) {
  if (doc_id < 0 || doc_id >= index.num_docs)
    throw std::out_of_range("score_bm25: unknown doc_id " + std::to_string(doc_id));
  const double len_norm =
      kBm25K1 * (1.0 - kBm25B +
                 kBm25B * index.doc_lengths[static_cast<std::size_t>(doc_id)] /
                     index.avg_doc_length);
  double score = 0.0;
  for (const auto& term : query_terms) {
    auto it = index.postings.find(term);
    if (it == index.postings.end()) continue;
    const auto& plist = it->second;
    auto pit = std::lower_bound(
        plist.begin(), plist.end(), doc_id,
        [](const Posting& p, int id) { return p.doc_id < id; });
    if (pit == plist.end() || pit->doc_id != doc_id) continue;
    const double tf = pit->tf;
    score += index.idf(term) * tf * (kBm25K1 + 1.0) / (tf + len_norm);
  }
  return score;
}

// Top-k by score, ties broken by ascending doc id. Only documents with a
// positive score are returned, so the result may be shorter than k.
// k = 0 is the refusal case and returns an empty result.
inline RetrievalResult retrieve_topk(const InvertedIndex& index,
                                     std::string_view query, int k) {
  if (k < 0) throw validation_error("retrieve_topk: k must be >= 0");
  RetrievalResult result;
  if (k == 0) return result;
  const auto terms = tokenize(query);
  std::vector<double> acc(static_cast<std::size_t>(index.num_docs), 0.0);
  std::vector<char> touched(static_cast<std::size_t>(index.num_docs), 0);
  for (const auto& term : terms) {
    auto it = index.postings.find(term);
    if (it == index.postings.end()) continue;
    const double idf = index.idf(term);
    for (const Posting& p : it->second) {
      const std::size_t d = static_cast<std::size_t>(p.doc_id);
      const double len_norm =
          kBm25K1 * (1.0 - kBm25B +
                     kBm25B * index.doc_lengths[d] / index.avg_doc_length);
      acc[d] += idf * p.tf * (kBm25K1 + 1.0) / (p.tf + len_norm);
      touched[d] = 1;
    }
  }
  std::vector<int> candidates;
  for (int d = 0; d < index.num_docs; ++d) {
    if (touched[static_cast<std::size_t>(d)] &&
        acc[static_cast<std::size_t>(d)] > 0.0)
      candidates.push_back(d);
  }
  std::sort(candidates.begin(), candidates.end(), [&](int a, int b) {
    const double sa = acc[static_cast<std::size_t>(a)];
    const double sb = acc[static_cast<std::size_t>(b)];
    if (sa != sb) return sa > sb;
    return a < b;
  });
  if (static_cast<int>(candidates.size()) > k) candidates.resize(static_cast<std::size_t>(k));
  result.doc_ids = std::move(candidates);
  result.scores.reserve(result.doc_ids.size());
  for (int d : result.doc_ids) result.scores.push_back(acc[static_cast<std::size_t>(d)]);
  return result;
}

inline RetrievalResult retrieval_prefix(const RetrievalResult& full, int k) {
  RetrievalResult out;
  const std::size_t n = std::min<std::size_t>(full.size(), static_cast<std::size_t>(std::max(k, 0)));
  out.doc_ids.assign(full.doc_ids.begin(), full.doc_ids.begin() + static_cast<std::ptrdiff_t>(n));
  out.scores.assign(full.scores.begin(), full.scores.begin() + static_cast<std::ptrdiff_t>(n));
  return out;
}

// ----- on-disk index artifact (JSON, keyed by corpus content hash) -----

inline constexpr int kIndexSchemaVersion = 1;

inline nlohmann::json index_to_json(const InvertedIndex& index,
                                    std::uint64_t corpus_hash_value) {
  nlohmann::json postings = nlohmann::json::object();
  for (const auto& [term, plist] : index.postings) {
    nlohmann::json arr = nlohmann::json::array();
    for (const Posting& p : plist) arr.push_back({p.doc_id, p.tf});
    postings[term] = std::move(arr);
  }
  nlohmann::json vocab = nlohmann::json::object();
  for (const auto& [term, df] : index.vocabulary) vocab[term] = df;
  return nlohmann::json{
      {"schema_version", kIndexSchemaVersion},
      {"corpus_hash", to_hex(corpus_hash_value)},
      {"num_docs", index.num_docs},
      {"avg_doc_length", index.avg_doc_length},
      {"doc_lengths", index.doc_lengths},
      {"vocabulary", std::move(vocab)},
      {"postings", std::move(postings)},
  };
}

struct IndexArtifact {
  InvertedIndex index;
  std::uint64_t corpus_hash = 0;
};

inline IndexArtifact index_from_json(const nlohmann::json& j) {
  if (!j.contains("schema_version") ||
      j["schema_version"].get<int>() != kIndexSchemaVersion)
    throw version_error("index artifact: unsupported schema version");
  IndexArtifact art;
  art.corpus_hash = from_hex(j.at("corpus_hash").get<std::string>());
  InvertedIndex& index = art.index;
  index.num_docs = j.at("num_docs").get<int>();
  index.avg_doc_length = j.at("avg_doc_length").get<double>();
  index.doc_lengths = j.at("doc_lengths").get<std::vector<int>>();
  for (const auto& [term, df] : j.at("vocabulary").items())
    index.vocabulary[term] = df.get<int>();
  for (const auto& [term, arr] : j.at("postings").items()) {
    std::vector<Posting> plist;
    plist.reserve(arr.size());
    for (const auto& pair : arr)
      plist.push_back(Posting{pair.at(0).get<int>(), pair.at(1).get<int>()});
    index.postings[term] = std::move(plist);
  }
  index.validate();
  return art;
}

inline void save_index(const std::string& path, const InvertedIndex& index,
                       std::uint64_t corpus_hash_value) {
  write_file_atomic(path, index_to_json(index, corpus_hash_value).dump());
}

inline IndexArtifact load_index(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw parse_error("index artifact '" + path + "': " + e.what());
  }
  return index_from_json(j);
}

}  // namespace ragctl
