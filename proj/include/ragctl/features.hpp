#pragma once

#include <array>
#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "ragctl/control.hpp"
#include "ragctl/corpus.hpp"
#include "ragctl/retriever.hpp"
#include "ragctl/util.hpp"

namespace ragctl {

inline constexpr int kDefaultEmbeddingDim = 256;
inline constexpr double kCharLenScale = 100.0;
inline constexpr double kTokenCountScale = 20.0;
inline constexpr std::uint64_t kSignHashBasis = 0x9e3779b97f4a7c15ull;

// State vector s(q): a hashed bag-of-words embedding plus five metadata
// entries derived from the question and a fixed-depth retrieval probe.
// Never reads gold answers or answerability.
struct StateFeatures {
  std::vector<double> embedding;  // dimension D
  std::array<double, 5> meta{};   // char_len/100, token_count/20,
                                  // top1, top1-top2 gap, mean of top-5

  int dim() const { return static_cast<int>(embedding.size()) + 5; }

  std::vector<double> flat() const {
    std::vector<double> out;
    out.reserve(embedding.size() + meta.size());
    out.insert(out.end(), embedding.begin(), embedding.end());
    out.insert(out.end(), meta.begin(), meta.end());
    return out;
  }

  static StateFeatures from_flat(const std::vector<double>& flat) {
    if (flat.size() < 5)
      throw dimension_error("feature vector too short: " +
                            std::to_string(flat.size()));
    StateFeatures f;
    f.embedding.assign(flat.begin(), flat.end() - 5);
    std::copy(flat.end() - 5, flat.end(), f.meta.begin());
    return f;
  }
};

// Signed feature hashing of question unigrams into D buckets, then
// L2-normalized when nonzero. Order-invariant by construction.
inline std::vector<double> embed_question(std::string_view question, int D) {
  if (D <= 0) throw validation_error("embed_question: D must be positive");
  std::vector<double> v(static_cast<std::size_t>(D), 0.0);
  for (const auto& term : tokenize(question)) {
    const std::size_t bucket =
        static_cast<std::size_t>(fnv1a64(term) % static_cast<std::uint64_t>(D));
    const double sign = (fnv1a64(term, kSignHashBasis) & 1u) ? 1.0 : -1.0;
    v[bucket] += sign;
  }
  double norm_sq = 0.0;
  for (double x : v) norm_sq += x * x;
  if (norm_sq > 0.0) {
    const double inv = 1.0 / std::sqrt(norm_sq);
    for (double& x : v) x *= inv;
  }
  return v;
}

// Meta features from an existing depth-10 probe. Scores beyond the
// available results are treated as 0 for the gap; the top-5 mean runs
// over retrieved entries only.
inline StateFeatures features_from_probe(std::string_view question,
                                         const RetrievalResult& probe, int D) {
  StateFeatures f;
  f.embedding = embed_question(question, D);
  f.meta[0] = static_cast<double>(question.size()) / kCharLenScale;
  f.meta[1] = static_cast<double>(tokenize(question).size()) / kTokenCountScale;
  const double top1 = probe.scores.empty() ? 0.0 : probe.scores[0];
  const double top2 = probe.scores.size() >= 2 ? probe.scores[1] : 0.0;
  f.meta[2] = top1;
  f.meta[3] = top1 - top2;
  const std::size_t n = std::min<std::size_t>(probe.scores.size(), 5);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += probe.scores[i];
  f.meta[4] = n > 0 ? sum / static_cast<double>(n) : 0.0;
  return f;
}

inline StateFeatures extract_features(const QuestionExample& example,
                                      const InvertedIndex& index, int D) {
  const RetrievalResult probe = retrieve_topk(index, example.question, kProbeDepth);
  return features_from_probe(example.question, probe, D);
}

}  // namespace ragctl
