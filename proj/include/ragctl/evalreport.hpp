#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ragctl/control.hpp"
#include "ragctl/logstore.hpp"
#include "ragctl/policy.hpp"
#include "ragctl/slo.hpp"
#include "ragctl/util.hpp"

namespace ragctl {

// Aggregate replay metrics over one evaluation set.
struct MetricsReport {
  double accuracy = 0.0;
  double avg_cost_tokens = 0.0;
  double avg_reward = 0.0;
  double refusal_rate = 0.0;
  double hallucination_rate = 0.0;
  double retrieval_hit_rate = 0.0;
  // False when no answerable question retrieved anything, in which
  // case retrieval_hit_rate is reported as 0.
  bool hit_rate_defined = true;
  std::array<double, kNumActions> action_distribution{};
  int n_questions = 0;
};

namespace detail {

// Replay under an arbitrary per-question chooser. The chooser sees the
// QuestionLog and returns the action id to look up.
template <typename ChooseFn>
MetricsReport replay_metrics(const SweepDataset& dataset,
                             const SloProfile& profile, ChooseFn&& choose) {
  profile.validate();
  if (dataset.questions.empty())
    throw validation_error("replay evaluation: empty evaluation set");
  MetricsReport report;
  report.n_questions = static_cast<int>(dataset.questions.size());
  int hit_den = 0;
  int hit_num = 0;
  for (const auto& q : dataset.questions) {
    const int a = choose(q);
    if (a < 0 || a >= kNumActions)
      throw integrity_error("replay evaluation: chosen action " +
                            std::to_string(a) + " out of range for qid '" +
                            q.qid + "'");
    const LoggedRecord& rec = q.records[static_cast<std::size_t>(a)];
    report.accuracy += rec.flags.acc;
    report.avg_cost_tokens += rec.flags.cost_tokens;
    report.avg_reward += compute_reward(rec.flags, profile);
    report.refusal_rate += rec.flags.refusal;
    report.hallucination_rate += rec.flags.hall;
    report.action_distribution[static_cast<std::size_t>(a)] += 1.0;
    if (rec.flags.hit.has_value()) {
      ++hit_den;
      hit_num += *rec.flags.hit;
    }
  }
  const double n = static_cast<double>(report.n_questions);
  report.accuracy /= n;
  report.avg_cost_tokens /= n;
  report.avg_reward /= n;
  report.refusal_rate /= n;
  report.hallucination_rate /= n;
  for (double& d : report.action_distribution) d /= n;
  if (hit_den == 0) {
    report.retrieval_hit_rate = 0.0;
    report.hit_rate_defined = false;
  } else {
    report.retrieval_hit_rate =
        static_cast<double>(hit_num) / static_cast<double>(hit_den);
  }
  return report;
}

}  // namespace detail

// Exact replay of a learned policy: predict on the stored features and
// look up the logged outcome of the chosen action.
inline MetricsReport evaluate_policy_replay(const PolicyModel& model,
                                            const SweepDataset& dataset,
                                            const SloProfile& profile) {
  if (model.corpus_hash != 0 && dataset.header.corpus_hash != 0 &&
      model.corpus_hash != dataset.header.corpus_hash)
    throw validation_error(
        "replay evaluation: model corpus hash " + to_hex(model.corpus_hash) +
        " does not match log corpus hash " + to_hex(dataset.header.corpus_hash));
  return detail::replay_metrics(dataset, profile, [&](const QuestionLog& q) {
    return predict_action(model, q.features.flat());
  });
}

inline MetricsReport evaluate_fixed(int action_id, const SweepDataset& dataset,
                                    const SloProfile& profile) {
  action_by_id(action_id);
  return detail::replay_metrics(dataset, profile,
                                [&](const QuestionLog&) { return action_id; });
}

// Per-question argmax of the logged rewards: the label function itself.
inline MetricsReport evaluate_oracle(const SweepDataset& dataset,
                                     const SloProfile& profile) {
  return detail::replay_metrics(dataset, profile, [&](const QuestionLog& q) {
    std::array<double, kNumActions> rewards{};
    for (int a = 0; a < kNumActions; ++a)
      rewards[static_cast<std::size_t>(a)] =
          compute_reward(q.records[static_cast<std::size_t>(a)].flags, profile);
    return label_best_action(rewards).first;
  });
}

// Single constant action maximizing average reward; ties to lowest id.
inline std::pair<int, MetricsReport> best_fixed_action(
    const SweepDataset& dataset, const SloProfile& profile) {
  int best = 0;
  MetricsReport best_report = evaluate_fixed(0, dataset, profile);
  for (int a = 1; a < kNumActions; ++a) {
    MetricsReport r = evaluate_fixed(a, dataset, profile);
    if (r.avg_reward > best_report.avg_reward) {
      best = a;
      best_report = r;
    }
  }
  return {best, best_report};
}

// ----- metrics serialization (eval artifacts) -----

inline nlohmann::json metrics_to_json(const MetricsReport& m) {
  return nlohmann::json{{"accuracy", m.accuracy},
                        {"avg_cost_tokens", m.avg_cost_tokens},
                        {"avg_reward", m.avg_reward},
                        {"refusal_rate", m.refusal_rate},
                        {"hallucination_rate", m.hallucination_rate},
                        {"retrieval_hit_rate", m.retrieval_hit_rate},
                        {"hit_rate_defined", m.hit_rate_defined},
                        {"action_distribution", m.action_distribution},
                        {"n_questions", m.n_questions}};
}

inline MetricsReport metrics_from_json(const nlohmann::json& j) {
  MetricsReport m;
  m.accuracy = j.at("accuracy").get<double>();
  m.avg_cost_tokens = j.at("avg_cost_tokens").get<double>();
  m.avg_reward = j.at("avg_reward").get<double>();
  m.refusal_rate = j.at("refusal_rate").get<double>();
  m.hallucination_rate = j.at("hallucination_rate").get<double>();
  m.retrieval_hit_rate = j.at("retrieval_hit_rate").get<double>();
  m.hit_rate_defined = j.at("hit_rate_defined").get<bool>();
  m.action_distribution =
      j.at("action_distribution").get<std::array<double, kNumActions>>();
  m.n_questions = j.at("n_questions").get<int>();
  return m;
}

// One table row: a (SLO, method) condition plus the best fixed action
// evaluated on the same set under the same SLO.
struct NamedReport {
  std::string slo;
  std::string method;  // "fixed-a<k>" | "argmax-ce" | "argmax-ce-wt" | ...
  MetricsReport metrics;
  int best_fixed_id = 0;
  MetricsReport best_fixed;
};

namespace detail {

inline std::string fmt_fixed(double value, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, value);
  return buf;
}

inline std::string method_display_name(const std::string& method) {
  if (method == "argmax-ce") return "Argmax-CE";
  if (method == "argmax-ce-wt") return "Argmax-CE-WT";
  if (method == "oracle") return "Oracle";
  if (method == "best-fixed") return "Best fixed";
  if (method.rfind("fixed-a", 0) == 0) {
    const std::string a = method.substr(6);
    if (a == "a1") return "Baseline (a1)";
    return "Fixed (" + a + ")";
  }
  return method;
}

inline std::string pad(const std::string& s, std::size_t width, bool right) {
  if (s.size() >= width) return s;
  std::string fill(width - s.size(), ' ');
  return right ? fill + s : s + fill;
}

}  // namespace detail

// Emits the metrics table (CSV and aligned text) and the plot-data CSVs
// into `dir`. Rows are sorted by (slo, method) for stable output.
inline void emit_report(const std::string& dir,
                        std::vector<NamedReport> entries) {
  std::sort(entries.begin(), entries.end(),
            [](const NamedReport& a, const NamedReport& b) {
              if (a.slo != b.slo) return a.slo < b.slo;
              return a.method < b.method;
            });

  std::string csv =
      "slo,method,acc,cost,reward,refuse,hit,"
      "best_fixed_acc,best_fixed_cost,best_fixed_reward\n";
  for (const auto& e : entries) {
    csv += e.slo + "," + e.method + "," +
           detail::fmt_fixed(e.metrics.accuracy, 3) + "," +
           detail::fmt_fixed(e.metrics.avg_cost_tokens, 4) + "," +
           detail::fmt_fixed(e.metrics.avg_reward, 4) + "," +
           detail::fmt_fixed(e.metrics.refusal_rate, 3) + "," +
           detail::fmt_fixed(e.metrics.retrieval_hit_rate, 3) + "," +
           detail::fmt_fixed(e.best_fixed.accuracy, 3) + "," +
           detail::fmt_fixed(e.best_fixed.avg_cost_tokens, 4) + "," +
           detail::fmt_fixed(e.best_fixed.avg_reward, 4) + "\n";
  }
  write_file_atomic(dir + "/metrics.csv", csv);

  const std::array<std::string, 10> headers = {
      "SLO",    "Method", "Acc",           "Cost",
      "Reward", "Refuse", "Hit",           "BestFixed Acc",
      "BestFixed Cost",   "BestFixed Reward"};
  std::vector<std::array<std::string, 10>> rows;
  for (const auto& e : entries) {
    rows.push_back({e.slo, detail::method_display_name(e.method),
                    detail::fmt_fixed(e.metrics.accuracy, 3),
                    detail::fmt_fixed(e.metrics.avg_cost_tokens, 4),
                    detail::fmt_fixed(e.metrics.avg_reward, 4),
                    detail::fmt_fixed(e.metrics.refusal_rate, 3),
                    detail::fmt_fixed(e.metrics.retrieval_hit_rate, 3),
                    detail::fmt_fixed(e.best_fixed.accuracy, 3),
                    detail::fmt_fixed(e.best_fixed.avg_cost_tokens, 4),
                    detail::fmt_fixed(e.best_fixed.avg_reward, 4)});
  }
  std::array<std::size_t, 10> widths{};
  for (std::size_t c = 0; c < headers.size(); ++c) {
    widths[c] = headers[c].size();
    for (const auto& row : rows) widths[c] = std::max(widths[c], row[c].size());
  }
  std::string txt;
  for (std::size_t c = 0; c < headers.size(); ++c)
    txt += detail::pad(headers[c], widths[c], c >= 2) + (c + 1 < headers.size() ? "  " : "");
  txt += "\n";
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c)
      txt += detail::pad(row[c], widths[c], c >= 2) + (c + 1 < row.size() ? "  " : "");
    txt += "\n";
  }
  write_file_atomic(dir + "/metrics.txt", txt);

  std::string fig1 = "slo,method,a0,a1,a2,a3,a4\n";
  for (const auto& e : entries) {
    fig1 += e.slo + "," + e.method;
    for (int a = 0; a < kNumActions; ++a)
      fig1 += "," + detail::fmt_fixed(
                        e.metrics.action_distribution[static_cast<std::size_t>(a)], 3);
    fig1 += "\n";
  }
  write_file_atomic(dir + "/fig1_action_dist.csv", fig1);

  std::string fig2 = "slo,method,cost,acc\n";
  for (const auto& e : entries)
    fig2 += e.slo + "," + e.method + "," +
            detail::fmt_fixed(e.metrics.avg_cost_tokens, 4) + "," +
            detail::fmt_fixed(e.metrics.accuracy, 3) + "\n";
  write_file_atomic(dir + "/fig2_cost_accuracy.csv", fig2);

  std::string fig3 = "slo,method,reward,best_fixed_reward\n";
  for (const auto& e : entries)
    fig3 += e.slo + "," + e.method + "," +
            detail::fmt_fixed(e.metrics.avg_reward, 4) + "," +
            detail::fmt_fixed(e.best_fixed.avg_reward, 4) + "\n";
  write_file_atomic(dir + "/fig3_reward.csv", fig3);
}

}  // namespace ragctl
