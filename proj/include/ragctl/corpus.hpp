#pragma once

#include <cctype>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "ragctl/util.hpp"

namespace ragctl {

struct Paragraph {
  int id = 0;           // position in ingestion order
  std::string text;
  std::string title;
};

struct QuestionExample {
  std::string qid;
  std::string question;
  bool answerable = false;
  std::vector<std::string> gold_answers;  // empty iff not answerable
  int source_paragraph = -1;
};

struct Corpus {
  std::vector<Paragraph> paragraphs;
  std::vector<QuestionExample> questions;
};

// Answer-string normalization: lowercase, punctuation to whitespace,
// drop the articles a/an/the as whole tokens, collapse whitespace.
// Punctuation maps to a space (not deletion) so that contractions keep
// a token boundary: "I don't know." -> "i don t know".
inline std::string normalize_text(std::string_view s) {
  std::string spaced;
  spaced.reserve(s.size());
  for (unsigned char c : s) {
    if (std::isalnum(c)) {
      spaced.push_back(static_cast<char>(std::tolower(c)));
    } else if (std::ispunct(c) || std::isspace(c)) {
      spaced.push_back(' ');
    } else {
      spaced.push_back(static_cast<char>(c));  // non-ASCII bytes pass through
    }
  }
  std::string out;
  out.reserve(spaced.size());
  std::size_t i = 0;
  while (i < spaced.size()) {
    while (i < spaced.size() && spaced[i] == ' ') ++i;
    std::size_t start = i;
    while (i < spaced.size() && spaced[i] != ' ') ++i;
    if (i == start) break;
    std::string_view tok(spaced.data() + start, i - start);
    if (tok == "a" || tok == "an" || tok == "the") continue;
    if (!out.empty()) out.push_back(' ');
    out.append(tok);
  }
  return out;
}

// Normalized exact match; false when golds is empty.
inline bool em_match(std::string_view prediction,
                     const std::vector<std::string>& golds) {
  if (golds.empty()) return false;
  const std::string p = normalize_text(prediction);
  for (const auto& g : golds) {
    if (normalize_text(g) == p) return true;
  }
  return false;
}

// Normalized case-insensitive substring containment. An empty needle
// (after normalization) never matches.
inline bool contains_normalized(std::string_view haystack,
                                std::string_view needle) {
  const std::string n = normalize_text(needle);
  if (n.empty()) return false;
  return normalize_text(haystack).find(n) != std::string::npos;
}

namespace detail {

inline const nlohmann::json& require_field(const nlohmann::json& obj,
                                           const char* key,
                                           const std::string& path) {
  auto it = obj.find(key);
  if (it == obj.end())
    throw schema_error("missing required field '" + std::string(key) +
                       "' at " + path);
  return *it;
}

}  // namespace detail

// Parse SQuAD 2.0 v2 JSON (top-level "data" -> articles -> "paragraphs"
// -> "context" + "qas"). One Paragraph per context, one QuestionExample
// per qa. Gold answers are deduplicated by normalized form; answers that
// normalize to the empty string are dropped. A qa whose effective gold
// set is empty is treated as unanswerable.
inline Corpus parse_squad(std::string_view raw_json) {
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(raw_json);
  } catch (const nlohmann::json::parse_error& e) {
    throw parse_error(std::string("malformed SQuAD JSON: ") + e.what());
  }
  Corpus corpus;
  const auto& data = detail::require_field(root, "data", "$");
  if (!data.is_array()) throw schema_error("'data' must be an array at $");
  for (std::size_t ai = 0; ai < data.size(); ++ai) {
    const std::string apath = "data[" + std::to_string(ai) + "]";
    const auto& article = data[ai];
    std::string title = article.value("title", "");
    const auto& paragraphs = detail::require_field(article, "paragraphs", apath);
    for (std::size_t pi = 0; pi < paragraphs.size(); ++pi) {
      const std::string ppath = apath + ".paragraphs[" + std::to_string(pi) + "]";
      const auto& para = paragraphs[pi];
      const auto& context = detail::require_field(para, "context", ppath);
      if (!context.is_string() || context.get<std::string>().empty())
        throw schema_error("'context' must be a non-empty string at " + ppath);
      Paragraph p;
      p.id = static_cast<int>(corpus.paragraphs.size());
      p.text = context.get<std::string>();
      p.title = title;
      const auto& qas = detail::require_field(para, "qas", ppath);
      for (std::size_t qi = 0; qi < qas.size(); ++qi) {
        const std::string qpath = ppath + ".qas[" + std::to_string(qi) + "]";
        const auto& qa = qas[qi];
        QuestionExample ex;
        ex.qid = detail::require_field(qa, "id", qpath).get<std::string>();
        ex.question =
            detail::require_field(qa, "question", qpath).get<std::string>();
        const bool impossible =
            detail::require_field(qa, "is_impossible", qpath).get<bool>();
        ex.source_paragraph = p.id;
        if (!impossible) {
          const auto& answers = detail::require_field(qa, "answers", qpath);
          std::unordered_set<std::string> seen;
          for (const auto& ans : answers) {
            std::string text =
                detail::require_field(ans, "text", qpath + ".answers").get<std::string>();
            std::string norm = normalize_text(text);
            if (norm.empty()) continue;  // whitespace-only golds carry no answer
            if (seen.insert(norm).second) ex.gold_answers.push_back(text);
          }
        }
        ex.answerable = !ex.gold_answers.empty();
        corpus.questions.push_back(std::move(ex));
      }
      corpus.paragraphs.push_back(std::move(p));
    }
  }
  return corpus;
}

inline Corpus load_squad_file(const std::string& path) {
  return parse_squad(read_file(path));
}

// Content hash covering paragraphs and questions; keys index artifacts
// and guards against mixing outputs from different corpora.
inline std::uint64_t corpus_hash(const Corpus& corpus) {
  std::uint64_t h = kFnvOffsetBasis;
  for (const auto& p : corpus.paragraphs) {
    h = fnv1a64_combine(h, p.text);
    h = fnv1a64_combine(h, "\x1f");
  }
  for (const auto& q : corpus.questions) {
    h = fnv1a64_combine(h, q.qid);
    h = fnv1a64_combine(h, q.question);
    h = fnv1a64_combine(h, q.answerable ? "1" : "0");
    for (const auto& g : q.gold_answers) h = fnv1a64_combine(h, g);
    h = fnv1a64_combine(h, "\x1e");
  }
  return h;
}

inline nlohmann::json corpus_manifest(const Corpus& corpus) {
  std::size_t answerable = 0;
  for (const auto& q : corpus.questions)
    if (q.answerable) ++answerable;
  return nlohmann::json{
      {"paragraphs", corpus.paragraphs.size()},
      {"questions", corpus.questions.size()},
      {"answerable", answerable},
      {"unanswerable", corpus.questions.size() - answerable},
      {"corpus_hash", to_hex(corpus_hash(corpus))},
  };
}

}  // namespace ragctl
