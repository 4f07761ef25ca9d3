#pragma once

#include <cctype>
#include <string>
#include <string_view>
#include <vector>

#include "ragctl/corpus.hpp"

namespace ragctl {

enum class PromptMode { guarded, permissive };

inline const char* prompt_mode_name(PromptMode mode) {
  return mode == PromptMode::guarded ? "guarded" : "auto";
}

inline PromptMode prompt_mode_from_name(std::string_view name) {
  if (name == "guarded") return PromptMode::guarded;
  if (name == "auto") return PromptMode::permissive;
  throw validation_error("unknown prompt mode '" + std::string(name) + "'");
}

struct GenerationOutput {
  std::string answer_text;
  int prompt_tokens = 0;
  int completion_tokens = 0;
};

// Fixed response of the refusal action; short by design.
inline constexpr const char* kRefusalMessage = "I cannot answer that.";

inline constexpr const char* kGuardedTemplate =
    "You are a careful question-answering assistant.\n"
    "Use ONLY the information in CONTEXT to answer the QUESTION.\n"
    "If the answer is not in CONTEXT, respond with: \"I don't know.\"\n"
    "\n"
    "CONTEXT:\n"
    "{retrieved_passages}\n"
    "\n"
    "QUESTION:\n"
    "{question}\n"
    "\n"
    "Answer (one short sentence):";

inline constexpr const char* kAutoTemplate =
    "Answer the QUESTION using the CONTEXT below.\n"
    "\n"
    "CONTEXT:\n"
    "{retrieved_passages}\n"
    "\n"
    "QUESTION:\n"
    "{question}\n"
    "\n"
    "Answer:";

namespace detail {

inline std::string substitute(std::string templ, std::string_view key,
                              std::string_view value) {
  const auto pos = templ.find(key);
  if (pos != std::string::npos) templ.replace(pos, key.size(), value);
  return templ;
}

}  // namespace detail

// Instantiate the prompt template for `mode`, passages joined by blank
// lines in rank order.
inline std::string assemble_prompt(PromptMode mode,
                                   const std::vector<const Paragraph*>& passages,
                                   std::string_view question) {
  std::string joined;
  for (std::size_t i = 0; i < passages.size(); ++i) {
    if (i > 0) joined += "\n\n";
    joined += passages[i]->text;
  }
  std::string out = mode == PromptMode::guarded ? kGuardedTemplate : kAutoTemplate;
  out = detail::substitute(std::move(out), "{retrieved_passages}", joined);
  out = detail::substitute(std::move(out), "{question}", question);
  return out;
}

// Whitespace-separated chunk count; the cost proxy for the simulator and
// any local counting. Provider-reported usage takes precedence for the
// HTTP backend.
inline int count_tokens(std::string_view s) {
  int count = 0;
  bool in_token = false;
  for (unsigned char c : s) {
    if (std::isspace(c)) {
      in_token = false;
    } else if (!in_token) {
      in_token = true;
      ++count;
    }
  }
  return count;
}

// An answer counts as a refusal when empty or when its normalized form
// starts with a refusal phrase. Prefix matching tolerates models that
// append explanations after the phrase.
inline bool detect_refusal(std::string_view answer_text) {
  const std::string norm = normalize_text(answer_text);
  if (norm.empty()) return true;
  return norm.rfind("i don t know", 0) == 0 ||
         norm.rfind("i cannot answer", 0) == 0;
}

// What one generation call needs. The HTTP backend consumes only the
// assembled prompt; the simulator consumes the structured fields.
struct GenerationRequest {
  PromptMode mode = PromptMode::guarded;
  std::string prompt;
  std::vector<const Paragraph*> passages;
  const QuestionExample* example = nullptr;
};

class GeneratorBackend {
 public:
  virtual ~GeneratorBackend() = default;
  virtual GenerationOutput generate(const GenerationRequest& request) = 0;
  virtual std::string name() const = 0;
};

// Deterministic generator: retrieval quality is the only driver of
// correctness. hit = some passage contains a gold answer (normalized
// substring). guarded answers only on a hit and refuses otherwise; auto
// always answers, fabricating on unanswerable questions.
inline GenerationOutput simulate_generate(PromptMode mode,
                                          const std::vector<const Paragraph*>& passages,
                                          const QuestionExample& example) {
  bool hit = false;
  for (const Paragraph* p : passages) {
    for (const auto& gold : example.gold_answers) {
      if (contains_normalized(p->text, gold)) {
        hit = true;
        break;
      }
    }
    if (hit) break;
  }
  GenerationOutput out;
  if (hit) {
    out.answer_text = example.gold_answers.front();
  } else if (mode == PromptMode::guarded) {
    out.answer_text = "I don't know.";
  } else if (example.answerable) {
    out.answer_text = "unverified claim";
  } else {
    out.answer_text = "fabricated detail";
  }
  out.prompt_tokens = count_tokens(assemble_prompt(mode, passages, example.question));
  out.completion_tokens = count_tokens(out.answer_text);
  return out;
}

class SimBackend final : public GeneratorBackend {
 public:
  GenerationOutput generate(const GenerationRequest& request) override {
    if (request.example == nullptr)
      throw backend_error("sim backend requires the question example");
    return simulate_generate(request.mode, request.passages, *request.example);
  }
  std::string name() const override { return "sim"; }
};

}  // namespace ragctl
