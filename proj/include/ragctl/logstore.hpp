#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdint>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "ragctl/control.hpp"
#include "ragctl/corpus.hpp"
#include "ragctl/features.hpp"
#include "ragctl/generation.hpp"
#include "ragctl/retriever.hpp"
#include "ragctl/util.hpp"

namespace ragctl {

inline constexpr int kLogSchemaVersion = 1;

struct SweepHeader {
  int schema_version = kLogSchemaVersion;
  int feature_dim = kDefaultEmbeddingDim;  // embedding dimension D
  double char_len_scale = kCharLenScale;
  double token_count_scale = kTokenCountScale;
  std::string backend;
  std::uint64_t seed = 0;
  std::uint64_t corpus_hash = 0;
  std::uint64_t config_hash = 0;
  std::string created_at;

  int total_feature_dim() const { return feature_dim + 5; }
};

struct LoggedRecord {
  std::string qid;
  int action_id = 0;
  OutcomeFlags flags;
  std::string answer_text;
  std::vector<int> retrieved_ids;
  std::string backend;
  std::string ts;
};

// The five records of one question plus its state features, which are
// identical across the records and stored once.
struct QuestionLog {
  std::string qid;
  bool answerable = false;
  StateFeatures features;
  std::array<LoggedRecord, kNumActions> records;
};

struct SweepDataset {
  SweepHeader header;
  std::vector<QuestionLog> questions;

  std::size_t size() const { return questions.size(); }
};

struct SweepOptions {
  std::size_t sample_size = 0;
  std::uint64_t seed = 0;
  int feature_dim = kDefaultEmbeddingDim;
  double max_failure_fraction = 0.1;
  int max_in_flight = 1;
  std::uint64_t corpus_hash = 0;
  std::uint64_t config_hash = 0;
};

struct SweepSummary {
  std::size_t requested = 0;
  std::size_t completed = 0;
  std::size_t failed = 0;
  long long total_cost_tokens = 0;
  std::vector<std::string> failed_qids;

  nlohmann::json to_json() const {
    return nlohmann::json{{"requested", requested},
                          {"completed", completed},
                          {"failed", failed},
                          {"total_cost_tokens", total_cost_tokens},
                          {"failed_qids", failed_qids}};
  }
};

namespace detail {

inline nlohmann::json header_to_json(const SweepHeader& h) {
  return nlohmann::json{{"type", "header"},
                        {"schema_version", h.schema_version},
                        {"feature_dim", h.feature_dim},
                        {"char_len_scale", h.char_len_scale},
                        {"token_count_scale", h.token_count_scale},
                        {"backend", h.backend},
                        {"seed", h.seed},
                        {"corpus_hash", to_hex(h.corpus_hash)},
                        {"config_hash", to_hex(h.config_hash)},
                        {"created_at", h.created_at}};
}

inline SweepHeader header_from_json(const nlohmann::json& j) {
  SweepHeader h;
  h.schema_version = j.at("schema_version").get<int>();
  if (h.schema_version != kLogSchemaVersion)
    throw version_error("sweep log: unsupported schema version " +
                        std::to_string(h.schema_version));
  h.feature_dim = j.at("feature_dim").get<int>();
  h.char_len_scale = j.at("char_len_scale").get<double>();
  h.token_count_scale = j.at("token_count_scale").get<double>();
  h.backend = j.at("backend").get<std::string>();
  h.seed = j.at("seed").get<std::uint64_t>();
  h.corpus_hash = from_hex(j.at("corpus_hash").get<std::string>());
  h.config_hash = from_hex(j.at("config_hash").get<std::string>());
  h.created_at = j.value("created_at", "");
  return h;
}

inline nlohmann::json record_to_json(const QuestionLog& q,
                                     const LoggedRecord& r) {
  nlohmann::json j{{"type", "record"},
                   {"qid", r.qid},
                   {"action", r.action_id},
                   {"acc", r.flags.acc},
                   {"cost_tokens", r.flags.cost_tokens},
                   {"hall", r.flags.hall},
                   {"refusal", r.flags.refusal},
                   {"refusal_correct", r.flags.refusal_correct},
                   {"answer", r.answer_text},
                   {"retrieved", r.retrieved_ids},
                   {"ts", r.ts}};
  if (r.flags.hit)
    j["hit"] = *r.flags.hit;
  else
    j["hit"] = nullptr;
  if (r.action_id == 0) {
    j["answerable"] = q.answerable;
    j["features"] = q.features.flat();
  }
  return j;
}

}  // namespace detail

// Sweep a sampled question set and persist the offline replay log:
// one header line, then one JSON record line per (qid, action), sorted
// by (qid, action id). Failed questions are dropped whole; the run
// aborts when more than max_failure_fraction of the sample fails.
inline SweepSummary run_sweep(const Corpus& corpus, const InvertedIndex& index,
                              GeneratorBackend& backend,
                              const SweepOptions& options,
                              const std::string& log_path) {
  if (options.sample_size > corpus.questions.size())
    throw validation_error("run_sweep: sample_size " +
                           std::to_string(options.sample_size) +
                           " exceeds available questions " +
                           std::to_string(corpus.questions.size()));
  SweepSummary summary;
  summary.requested = options.sample_size;
  if (options.sample_size == 0)
    std::cerr << "warning: sweep sample_size is 0; writing header only\n";

  const auto sampled = sample_without_replacement(
      corpus.questions.size(), options.sample_size, options.seed);

  struct Slot {
    bool ok = false;
    QuestionLog log;
    std::string error;
    std::string qid;
  };
  std::vector<Slot> slots(sampled.size());

  const std::string ts = utc_timestamp();
  auto work_one = [&](std::size_t slot_idx) {
    const QuestionExample& example = corpus.questions[sampled[slot_idx]];
    Slot& slot = slots[slot_idx];
    slot.qid = example.qid;
    try {
      QuestionSweep sweep = sweep_question(example, corpus.paragraphs, index, backend);
      QuestionLog qlog;
      qlog.qid = example.qid;
      qlog.answerable = example.answerable;
      qlog.features = features_from_probe(example.question, sweep.probe,
                                          options.feature_dim);
      for (int a = 0; a < kNumActions; ++a) {
        const ActionOutcome& outcome = sweep.outcomes[static_cast<std::size_t>(a)];
        LoggedRecord rec;
        rec.qid = example.qid;
        rec.action_id = a;
        rec.flags = outcome.flags;
        rec.answer_text = outcome.answer_text;
        rec.retrieved_ids = outcome.retrieval.doc_ids;
        rec.backend = backend.name();
        rec.ts = ts;
        qlog.records[static_cast<std::size_t>(a)] = std::move(rec);
      }
      slot.log = std::move(qlog);
      slot.ok = true;
    } catch (const std::exception& e) {
      slot.error = e.what();
    }
  };

  const int workers = std::max(1, std::min<int>(options.max_in_flight,
                                                static_cast<int>(sampled.size())));
  if (workers <= 1) {
    for (std::size_t i = 0; i < sampled.size(); ++i) work_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        while (true) {
          const std::size_t i = next.fetch_add(1);
          if (i >= sampled.size()) break;
          work_one(i);
        }
      });
    }
    for (auto& t : pool) t.join();
  }

  std::vector<const QuestionLog*> completed;
  completed.reserve(slots.size());
  for (const Slot& slot : slots) {
    if (slot.ok) {
      completed.push_back(&slot.log);
    } else {
      ++summary.failed;
      summary.failed_qids.push_back(slot.qid);
      std::cerr << "warning: sweep failed for qid '" << slot.qid
                << "': " << slot.error << "\n";
    }
  }
  if (summary.requested > 0 &&
      static_cast<double>(summary.failed) >
          options.max_failure_fraction * static_cast<double>(summary.requested))
    throw backend_error("sweep aborted: " + std::to_string(summary.failed) +
                        " of " + std::to_string(summary.requested) +
                        " questions failed (limit " +
                        std::to_string(options.max_failure_fraction) + ")");
  summary.completed = completed.size();

  std::sort(completed.begin(), completed.end(),
            [](const QuestionLog* a, const QuestionLog* b) { return a->qid < b->qid; });

  SweepHeader header;
  header.feature_dim = options.feature_dim;
  header.backend = backend.name();
  header.seed = options.seed;
  header.corpus_hash = options.corpus_hash;
  header.config_hash = options.config_hash;
  header.created_at = ts;

  std::ostringstream out;
  out << detail::header_to_json(header).dump() << "\n";
  for (const QuestionLog* q : completed) {
    for (const LoggedRecord& rec : q->records) {
      summary.total_cost_tokens += rec.flags.cost_tokens;
      out << detail::record_to_json(*q, rec).dump() << "\n";
    }
  }
  write_file_atomic(log_path, out.str());
  return summary;
}

// Read and validate a sweep log: header version, full-sweep completeness
// per qid (actions 0..4 exactly once), feature dimension.
inline SweepDataset read_log(const std::string& path) {
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t line_no = 0;

  if (!std::getline(in, line))
    throw integrity_error("sweep log '" + path + "' is empty");
  ++line_no;
  nlohmann::json jheader;
  try {
    jheader = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw parse_error("sweep log line 1: " + std::string(e.what()));
  }
  if (jheader.value("type", "") != "header")
    throw integrity_error("sweep log '" + path + "': first line is not a header");

  SweepDataset dataset;
  dataset.header = detail::header_from_json(jheader);

  std::map<std::string, std::size_t> qid_to_slot;
  std::vector<std::array<bool, kNumActions>> seen;

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw parse_error("sweep log line " + std::to_string(line_no) + ": " + e.what());
    }
    if (j.value("type", "") != "record")
      throw integrity_error("sweep log line " + std::to_string(line_no) +
                            ": expected a record line");
    LoggedRecord rec;
    try {
      rec.qid = j.at("qid").get<std::string>();
      rec.action_id = j.at("action").get<int>();
      rec.flags.acc = j.at("acc").get<int>();
      rec.flags.cost_tokens = j.at("cost_tokens").get<int>();
      rec.flags.hall = j.at("hall").get<int>();
      rec.flags.refusal = j.at("refusal").get<int>();
      rec.flags.refusal_correct = j.at("refusal_correct").get<int>();
      if (!j.at("hit").is_null()) rec.flags.hit = j.at("hit").get<int>();
      rec.answer_text = j.at("answer").get<std::string>();
      rec.retrieved_ids = j.at("retrieved").get<std::vector<int>>();
      rec.ts = j.value("ts", "");
    } catch (const nlohmann::json::exception& e) {
      throw schema_error("sweep log line " + std::to_string(line_no) + ": " + e.what());
    }
    rec.backend = dataset.header.backend;
    if (rec.action_id < 0 || rec.action_id >= kNumActions)
      throw integrity_error("sweep log line " + std::to_string(line_no) +
                            ": action id out of range");
    rec.flags.validate();

    auto [it, inserted] = qid_to_slot.try_emplace(rec.qid, dataset.questions.size());
    if (inserted) {
      dataset.questions.emplace_back();
      dataset.questions.back().qid = rec.qid;
      seen.push_back({});
    }
    QuestionLog& qlog = dataset.questions[it->second];
    auto& seen_actions = seen[it->second];
    if (seen_actions[static_cast<std::size_t>(rec.action_id)])
      throw integrity_error("sweep log: duplicate record for qid '" + rec.qid +
                            "' action " + std::to_string(rec.action_id));
    seen_actions[static_cast<std::size_t>(rec.action_id)] = true;

    if (rec.action_id == 0) {
      try {
        qlog.answerable = j.at("answerable").get<bool>();
        qlog.features = StateFeatures::from_flat(
            j.at("features").get<std::vector<double>>());
      } catch (const nlohmann::json::exception& e) {
        throw schema_error("sweep log line " + std::to_string(line_no) +
                           ": action-0 record: " + e.what());
      }
      if (qlog.features.dim() != dataset.header.total_feature_dim())
        throw dimension_error(
            "sweep log: feature dimension " + std::to_string(qlog.features.dim()) +
            " for qid '" + rec.qid + "' does not match header " +
            std::to_string(dataset.header.total_feature_dim()));
    }
    qlog.records[static_cast<std::size_t>(rec.action_id)] = std::move(rec);
  }

  for (std::size_t i = 0; i < dataset.questions.size(); ++i) {
    for (int a = 0; a < kNumActions; ++a) {
      if (!seen[i][static_cast<std::size_t>(a)])
        throw integrity_error("sweep log: incomplete sweep for qid '" +
                              dataset.questions[i].qid + "': missing action " +
                              std::to_string(a));
    }
  }
  return dataset;
}

// Fraction that yields 200 eval questions when the log is large enough,
// half the log otherwise.
inline double default_eval_fraction(std::size_t n_qids) {
  if (n_qids < 2) return 0.5;
  return std::min(200.0 / static_cast<double>(n_qids), 0.5);
}

// Disjoint train/eval split by qid; all five records of a qid stay
// together. Deterministic for a fixed seed.
inline std::pair<SweepDataset, SweepDataset> split_log(const SweepDataset& dataset,
                                                       double eval_fraction,
                                                       std::uint64_t seed) {
  const std::size_t n = dataset.questions.size();
  if (n < 2)
    throw validation_error("split_log: need at least 2 qids, have " +
                           std::to_string(n));
  if (!(eval_fraction > 0.0 && eval_fraction < 1.0))
    throw validation_error("split_log: eval_fraction must be in (0, 1)");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  deterministic_shuffle(order, rng);

  auto eval_count = static_cast<std::size_t>(
      std::llround(eval_fraction * static_cast<double>(n)));
  eval_count = std::clamp<std::size_t>(eval_count, 1, n - 1);

  std::vector<char> is_eval(n, 0);
  for (std::size_t i = 0; i < eval_count; ++i) is_eval[order[i]] = 1;

  SweepDataset train{dataset.header, {}};
  SweepDataset eval{dataset.header, {}};
  for (std::size_t i = 0; i < n; ++i) {
    (is_eval[i] ? eval : train).questions.push_back(dataset.questions[i]);
  }
  return {std::move(train), std::move(eval)};
}

}  // namespace ragctl
