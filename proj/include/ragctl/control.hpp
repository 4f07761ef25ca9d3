#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "ragctl/corpus.hpp"
#include "ragctl/generation.hpp"
#include "ragctl/retriever.hpp"
#include "ragctl/util.hpp"

namespace ragctl {

inline constexpr int kNumActions = 5;
inline constexpr int kProbeDepth = 10;  // max action depth; also the feature probe

// One of the five control choices. mode is empty for the refusal action,
// which performs no retrieval and no generation call.
struct Action {
  int id = 0;
  int retrieval_k = 0;
  std::optional<PromptMode> mode;

  bool is_refusal() const { return !mode.has_value(); }
};

inline const std::array<Action, kNumActions>& action_space() {
  static const std::array<Action, kNumActions> actions = {{
      {0, 2, PromptMode::guarded},
      {1, 5, PromptMode::guarded},
      {2, 10, PromptMode::guarded},
      {3, 5, PromptMode::permissive},
      {4, 0, std::nullopt},
  }};
  return actions;
}

inline const Action& action_by_id(int id) {
  if (id < 0 || id >= kNumActions)
    throw validation_error("action id out of range: " + std::to_string(id));
  return action_space()[static_cast<std::size_t>(id)];
}

// Raw per-(question, action) outcome. Rewards are derived from these
// later, never stored as ground truth.
struct OutcomeFlags {
  int acc = 0;
  int cost_tokens = 0;
  int hall = 0;
  int refusal = 0;
  int refusal_correct = 0;      // +1 correct refusal, -1 incorrect, 0 none
  std::optional<int> hit;       // answerable examples with retrieval only

  void validate() const {
    auto bit = [](int v, const char* what) {
      if (v != 0 && v != 1)
        throw validation_error(std::string("outcome flags: ") + what +
                               " must be 0 or 1");
    };
    bit(acc, "acc");
    bit(hall, "hall");
    bit(refusal, "refusal");
    if (cost_tokens < 0)
      throw validation_error("outcome flags: cost_tokens must be >= 0");
    if (refusal_correct < -1 || refusal_correct > 1)
      throw validation_error("outcome flags: refusal_correct must be in {-1,0,1}");
    if (refusal == 1 && (acc != 0 || hall != 0))
      throw validation_error("outcome flags: refusal implies acc=0 and hall=0");
    if (hall == 1 && refusal != 0)
      throw validation_error("outcome flags: hall requires refusal=0");
    if ((refusal == 1) != (refusal_correct != 0))
      throw validation_error("outcome flags: refusal_correct inconsistent with refusal");
    if (hit && *hit != 0 && *hit != 1)
      throw validation_error("outcome flags: hit must be 0 or 1 when present");
  }
};

struct ActionOutcome {
  Action action;
  OutcomeFlags flags;
  RetrievalResult retrieval;
  std::string answer_text;
  GenerationOutput generation;
};

namespace detail {

inline bool passages_contain_gold(const std::vector<const Paragraph*>& passages,
                                  const QuestionExample& example) {
  for (const Paragraph* p : passages)
    for (const auto& gold : example.gold_answers)
      if (contains_normalized(p->text, gold)) return true;
  return false;
}

}  // namespace detail

// Run one (question, action) pair end to end: retrieve, prompt,
// generate, flag outcomes. `preretrieved` may carry a deeper retrieval
// for the same question; its k-prefix is used instead of a fresh query
// (identical by the prefix property).
inline ActionOutcome execute_action(const QuestionExample& example,
                                    const Action& action,
                                    const std::vector<Paragraph>& paragraphs,
                                    const InvertedIndex& index,
                                    GeneratorBackend& backend,
                                    const RetrievalResult* preretrieved = nullptr) {
  ActionOutcome out;
  out.action = action;

  if (action.is_refusal()) {
    out.answer_text = kRefusalMessage;
    out.generation.answer_text = out.answer_text;
    out.generation.completion_tokens = count_tokens(out.answer_text);
    out.flags.refusal = 1;
    out.flags.cost_tokens = out.generation.completion_tokens;
    out.flags.refusal_correct = example.answerable ? -1 : 1;
    return out;
  }

  out.retrieval = preretrieved != nullptr
                      ? retrieval_prefix(*preretrieved, action.retrieval_k)
                      : retrieve_topk(index, example.question, action.retrieval_k);
  std::vector<const Paragraph*> passages;
  passages.reserve(out.retrieval.size());
  for (int doc_id : out.retrieval.doc_ids) {
    if (doc_id < 0 || doc_id >= static_cast<int>(paragraphs.size()))
      throw std::out_of_range("execute_action: retrieved doc id out of range");
    passages.push_back(&paragraphs[static_cast<std::size_t>(doc_id)]);
  }

  GenerationRequest request;
  request.mode = *action.mode;
  request.prompt = assemble_prompt(request.mode, passages, example.question);
  request.passages = passages;
  request.example = &example;
  try {
    out.generation = backend.generate(request);
  } catch (const std::exception& e) {
    throw backend_error("generation failed for qid=" + example.qid +
                        " action=" + std::to_string(action.id) + ": " + e.what());
  }

  out.answer_text = out.generation.answer_text;
  const bool refused = detect_refusal(out.answer_text);
  out.flags.refusal = refused ? 1 : 0;
  out.flags.acc = (!refused && example.answerable &&
                   em_match(out.answer_text, example.gold_answers))
                      ? 1
                      : 0;
  out.flags.hall = (!example.answerable && !refused) ? 1 : 0;
  out.flags.cost_tokens =
      out.generation.prompt_tokens + out.generation.completion_tokens;
  if (refused) out.flags.refusal_correct = example.answerable ? -1 : 1;
  if (example.answerable)
    out.flags.hit = detail::passages_contain_gold(passages, example) ? 1 : 0;
  return out;
}

struct QuestionSweep {
  std::array<ActionOutcome, kNumActions> outcomes;  // ascending action id
  RetrievalResult probe;                            // depth-10 diagnostics
};

// Full action sweep for one question. A single probe retrieval at the
// maximum depth serves both the k <= 10 actions (prefix property) and
// the feature diagnostics. Any action failure fails the whole question.
inline QuestionSweep sweep_question(const QuestionExample& example,
                                    const std::vector<Paragraph>& paragraphs,
                                    const InvertedIndex& index,
                                    GeneratorBackend& backend) {
  QuestionSweep sweep;
  sweep.probe = retrieve_topk(index, example.question, kProbeDepth);
  for (const Action& action : action_space()) {
    sweep.outcomes[static_cast<std::size_t>(action.id)] = execute_action(
        example, action, paragraphs, index, backend,
        action.is_refusal() ? nullptr : &sweep.probe);
  }
  return sweep;
}

}  // namespace ragctl
