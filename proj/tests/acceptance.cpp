#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "bm25_oracle.hpp"
#include "desk_corpus.hpp"
#include "ragctl/config.hpp"
#include "ragctl/corpus.hpp"
#include "ragctl/evalreport.hpp"
#include "ragctl/logstore.hpp"
#include "ragctl/policy.hpp"
#include "ragctl/retriever.hpp"
#include "ragctl/slo.hpp"

namespace fs = std::filesystem;

namespace {

// Each test covers one release criterion and prints a single
// machine-readable verdict line when it finishes.
class Acceptance : public ::testing::Test {
 protected:
  void begin(std::string label) {
    label_ = std::move(label);
    start_ = std::chrono::steady_clock::now();
  }

  double elapsed_seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start_)
        .count();
  }

  void TearDown() override {
    std::cout << "[ACCEPTANCE] " << label_ << ": "
              << (HasFailure() ? "FAIL" : "PASS") << std::endl;
  }

 private:
  std::string label_ = "(unlabeled)";
  std::chrono::steady_clock::time_point start_;
};

// ----- shared fixtures -----

const ragctl::Corpus& desk_corpus() {
  static const ragctl::Corpus corpus = desk::make_corpus(desk::Spec{});
  return corpus;
}

const ragctl::InvertedIndex& desk_index() {
  static const ragctl::InvertedIndex index =
      ragctl::build_index(desk_corpus().paragraphs);
  return index;
}

ragctl::SweepDataset sweep_desk(std::size_t n, std::uint64_t seed,
                                int feature_dim, const std::string& tag) {
  ragctl::SimBackend backend;
  ragctl::SweepOptions opt;
  opt.sample_size = n;
  opt.seed = seed;
  opt.feature_dim = feature_dim;
  opt.corpus_hash = ragctl::corpus_hash(desk_corpus());
  const std::string path = ::testing::TempDir() + "acceptance_" + tag + ".jsonl";
  ragctl::run_sweep(desk_corpus(), desk_index(), backend, opt, path);
  return ragctl::read_log(path);
}

// The train/eval halves used by the two behavioral criteria. Built once:
// both criteria must see the same log so the contrast is profile-driven.
struct BehavioralSplit {
  ragctl::SweepDataset train;
  ragctl::SweepDataset eval;
};

const BehavioralSplit& behavioral_split() {
  static const BehavioralSplit split = [] {
    const auto dataset = sweep_desk(400, 11, 32, "behavioral");
    auto [train, eval] = ragctl::split_log(
        dataset, ragctl::default_eval_fraction(dataset.questions.size()), 13);
    return BehavioralSplit{std::move(train), std::move(eval)};
  }();
  return split;
}

// ----- C1 -----

TEST_F(Acceptance, C01_Bm25MatchesIndependentOracle) {
  begin("C1 bm25-oracle-equivalence");
  const std::vector<std::string> vocab{"t0", "t1", "t2", "t3",
                                       "t4", "t5", "t6", "t7"};
  for (int trial = 0; trial < 50; ++trial) {
    std::mt19937_64 rng(9000 + static_cast<std::uint64_t>(trial));
    const int num_docs = 1 + static_cast<int>(ragctl::bounded_uniform(rng, 10));

    std::vector<std::vector<std::string>> docs;
    std::vector<ragctl::Paragraph> paragraphs;
    for (int d = 0; d < num_docs; ++d) {
      const int len = 1 + static_cast<int>(ragctl::bounded_uniform(rng, 12));
      std::vector<std::string> tokens;
      std::string text;
      for (int t = 0; t < len; ++t) {
        const auto& term = vocab[ragctl::bounded_uniform(rng, vocab.size())];
        tokens.push_back(term);
        if (!text.empty()) text += ' ';
        text += term;
      }
      docs.push_back(std::move(tokens));
      paragraphs.push_back(ragctl::Paragraph{d, text, ""});
    }
    const auto index = ragctl::build_index(paragraphs);

    const int query_len = 1 + static_cast<int>(ragctl::bounded_uniform(rng, 5));
    std::vector<std::string> query_terms;
    std::string query;
    for (int t = 0; t < query_len; ++t) {
      const auto& term = vocab[ragctl::bounded_uniform(rng, vocab.size())];
      query_terms.push_back(term);
      if (!query.empty()) query += ' ';
      query += term;
    }

    const auto expected = bm25_oracle::score_all(docs, query_terms);
    for (int d = 0; d < num_docs; ++d)
      ASSERT_NEAR(ragctl::score_bm25(index, query_terms, d),
                  expected[static_cast<std::size_t>(d)], 1e-9)
          << "trial " << trial << " doc " << d;

    for (int k : {1, 3, num_docs})
      ASSERT_EQ(ragctl::retrieve_topk(index, query, k).doc_ids,
                bm25_oracle::topk(expected, k))
          << "trial " << trial << " k " << k;
  }
  EXPECT_LT(elapsed_seconds(), 5.0);
}

// ----- C2 -----

TEST_F(Acceptance, C02_TopKDepthsNestAsPrefixes) {
  begin("C2 retrieval-prefix-property");
  std::vector<std::string> pool;
  for (int i = 0; i < 80; ++i) pool.push_back(desk::detail::fmt("topic%03d", i));
  for (int i = 0; i < 80; ++i) pool.push_back(desk::detail::fmt("answer%03d", i));
  for (int i = 0; i < 150; ++i) pool.push_back(desk::detail::fmt("w%03d", i));

  std::mt19937_64 rng(4242);
  for (int q = 0; q < 100; ++q) {
    const int len = 1 + static_cast<int>(ragctl::bounded_uniform(rng, 4));
    std::string query;
    for (int t = 0; t < len; ++t) {
      if (!query.empty()) query += ' ';
      query += pool[ragctl::bounded_uniform(rng, pool.size())];
    }
    const auto top2 = ragctl::retrieve_topk(desk_index(), query, 2).doc_ids;
    const auto top5 = ragctl::retrieve_topk(desk_index(), query, 5).doc_ids;
    const auto top10 = ragctl::retrieve_topk(desk_index(), query, 10).doc_ids;
    ASSERT_LE(top2.size(), top5.size());
    ASSERT_LE(top5.size(), top10.size());
    ASSERT_TRUE(std::equal(top2.begin(), top2.end(), top5.begin()))
        << "query '" << query << "'";
    ASSERT_TRUE(std::equal(top5.begin(), top5.end(), top10.begin()))
        << "query '" << query << "'";
  }
}

// ----- C3 -----

TEST_F(Acceptance, C03_ExactMatchNormalizationSuite) {
  begin("C3 em-normalization-suite");
  struct Vec {
    const char* a;
    const char* b;
    bool want;
  };
  const Vec vectors[] = {
      {"The Eiffel Tower!", "eiffel   tower", true},
      {"a cat", "cat", true},
      {"cats", "cat", false},
      {"Paris", "paris", true},
      {"PARIS", "Paris.", true},
      {"the answer", "answer", true},
      {"an apple", "Apple", true},
      {"A", "a", true},
      {"", "", true},
      {"", "x", false},
      {"   ", "", true},
      {"don't", "don t", true},
      {"I don't know.", "i don t know", true},
      {"U.S.A.", "u s a", true},
      {"New   York", "new york", true},
      {"New York", "york new", false},
      {"1,000", "1 000", true},
      {"42", "42", true},
      {"forty-two", "forty two", true},
      {"theater", "theatre", false},
      {"The the", "the", true},
      {"thethe", "the", false},
      {"(quoted)", "quoted", true},
      {"semi;colon", "semi colon", true},
  };
  int count = 0;
  for (const auto& v : vectors) {
    EXPECT_EQ(ragctl::em_match(v.a, {v.b}), v.want)
        << "'" << v.a << "' vs '" << v.b << "'";
    EXPECT_EQ(ragctl::em_match(v.b, {v.a}), v.want);
    ++count;
  }
  EXPECT_GE(count, 20);
}

// ----- C4 -----

ragctl::OutcomeFlags make_flags(int acc, int cost, int hall, int refusal,
                                int ref_correct) {
  ragctl::OutcomeFlags f;
  f.acc = acc;
  f.cost_tokens = cost;
  f.hall = hall;
  f.refusal = refusal;
  f.refusal_correct = ref_correct;
  return f;
}

TEST_F(Acceptance, C04_RewardArithmeticAndMonotonicity) {
  begin("C4 reward-arithmetic");
  const auto profiles = ragctl::builtin_profiles();
  const auto& quality = profiles[0];
  const auto& cheap = profiles[1];

  EXPECT_NEAR(ragctl::compute_reward(make_flags(1, 244, 0, 0, 0), quality),
              0.9756, 1e-12);
  EXPECT_NEAR(ragctl::compute_reward(make_flags(0, 11, 0, 1, 1), cheap), 0.489,
              1e-12);
  EXPECT_NEAR(ragctl::compute_reward(make_flags(0, 4, 0, 1, -1), quality),
              -0.5004, 1e-12);
  EXPECT_NEAR(ragctl::compute_reward(make_flags(0, 4, 0, 1, 1), quality),
              0.4996, 1e-12);
  EXPECT_NEAR(ragctl::compute_reward(make_flags(0, 620, 1, 0, 0), quality),
              -1.062, 1e-12);
  EXPECT_NEAR(ragctl::compute_reward(make_flags(1, 0, 0, 0, 0), quality), 1.0,
              1e-12);
  EXPECT_NEAR(ragctl::compute_reward(make_flags(0, 0, 0, 0, 0), quality), 0.0,
              1e-12);
  EXPECT_NEAR(ragctl::compute_reward(make_flags(1, 1000, 0, 0, 0), cheap), -0.5,
              1e-12);
  EXPECT_NEAR(ragctl::compute_reward(make_flags(0, 500, 1, 0, 0), cheap), -1.0,
              1e-12);
  EXPECT_NEAR(ragctl::compute_reward(make_flags(0, 4, 0, 1, -1), cheap),
              -0.504, 1e-12);
  EXPECT_NEAR(ragctl::compute_reward(make_flags(1, 100, 0, 0, 0), cheap), 0.4,
              1e-12);

  std::mt19937_64 rng(777);
  auto uniform = [&](double lo, double hi) {
    return lo + (hi - lo) * std::generate_canonical<double, 53>(rng);
  };
  for (int draw = 0; draw < 1000; ++draw) {
    ragctl::SloProfile p;
    p.name = "draw";
    p.w_acc = uniform(0.0, 2.0);
    p.w_cost = uniform(0.0, 2.0);
    p.w_hall = uniform(0.0, 2.0);
    p.w_ref = uniform(0.0, 2.0);
    p.cost_scale = uniform(100.0, 5000.0);

    const int cost = static_cast<int>(ragctl::bounded_uniform(rng, 2000));
    const int extra = 1 + static_cast<int>(ragctl::bounded_uniform(rng, 500));

    // More accuracy never hurts; more cost and hallucination never help.
    ASSERT_GE(ragctl::compute_reward(make_flags(1, cost, 0, 0, 0), p),
              ragctl::compute_reward(make_flags(0, cost, 0, 0, 0), p));
    ASSERT_LE(ragctl::compute_reward(make_flags(0, cost + extra, 0, 0, 0), p),
              ragctl::compute_reward(make_flags(0, cost, 0, 0, 0), p));
    ASSERT_LE(ragctl::compute_reward(make_flags(0, cost, 1, 0, 0), p),
              ragctl::compute_reward(make_flags(0, cost, 0, 0, 0), p));
    ASSERT_GE(ragctl::compute_reward(make_flags(0, cost, 0, 1, 1), p),
              ragctl::compute_reward(make_flags(0, cost, 0, 1, -1), p));
  }
}

// ----- C5 -----

TEST_F(Acceptance, C05_AnalyticGradientsMatchFiniteDifferences) {
  begin("C5 gradient-check");
  std::mt19937_64 rng(31337);
  auto uniform = [&](double lo, double hi) {
    return lo + (hi - lo) * std::generate_canonical<double, 53>(rng);
  };

  for (int trial = 0; trial < 20; ++trial) {
    const int dim = 6;
    ragctl::PolicyModel model = ragctl::PolicyModel::zeros(dim);
    for (double& w : model.weights) w = uniform(-1.0, 1.0);
    for (double& b : model.bias) b = uniform(-1.0, 1.0);

    // Even trials exercise unit weights (CE), odd trials margin-style
    // weights (CE-WT); both flow through the same weighted gradient.
    std::vector<std::vector<double>> xs;
    std::vector<ragctl::WeightedExample> batch;
    for (int i = 0; i < 8; ++i) {
      std::vector<double> x(dim);
      for (double& v : x) v = uniform(-2.0, 2.0);
      xs.push_back(std::move(x));
    }
    for (int i = 0; i < 8; ++i) {
      const int label = static_cast<int>(ragctl::bounded_uniform(rng, 5));
      const double w = trial % 2 == 0 ? 1.0 : uniform(0.1, 2.0);
      batch.push_back(ragctl::WeightedExample{xs[static_cast<std::size_t>(i)],
                                              label, w});
    }

    const double l2 = trial % 3 == 0 ? 0.0 : 1e-3;
    const auto lg = ragctl::ce_loss_and_grad(model, batch, l2);

    const double eps = 1e-6;
    auto check = [&](double analytic, double fd, const char* kind, int idx) {
      const double denom = std::max({1.0, std::abs(analytic), std::abs(fd)});
      ASSERT_LE(std::abs(analytic - fd) / denom, 1e-4)
          << "trial " << trial << " " << kind << " " << idx;
    };
    for (std::size_t i = 0; i < model.weights.size(); ++i) {
      auto up = model;
      auto down = model;
      up.weights[i] += eps;
      down.weights[i] -= eps;
      const double fd = (ragctl::ce_loss_and_grad(up, batch, l2).loss -
                         ragctl::ce_loss_and_grad(down, batch, l2).loss) /
                        (2 * eps);
      check(lg.d_weights[i], fd, "weight", static_cast<int>(i));
    }
    for (std::size_t a = 0; a < 5; ++a) {
      auto up = model;
      auto down = model;
      up.bias[a] += eps;
      down.bias[a] -= eps;
      const double fd = (ragctl::ce_loss_and_grad(up, batch, l2).loss -
                         ragctl::ce_loss_and_grad(down, batch, l2).loss) /
                        (2 * eps);
      check(lg.d_bias[a], fd, "bias", static_cast<int>(a));
    }
  }
  EXPECT_LT(elapsed_seconds(), 10.0);
}

// ----- C6 -----

// Labels follow a hard threshold on the first embedding feature: above
// it the question is answerable and action 0 wins, below it refusing
// wins. Everything else in the records is plausible but irrelevant.
ragctl::SweepDataset separable_dataset(std::size_t n, int embed_dim) {
  ragctl::SweepDataset ds;
  ds.header.feature_dim = embed_dim;
  const int guarded_costs[] = {120, 260, 500};
  for (std::size_t i = 0; i < n; ++i) {
    ragctl::QuestionLog q;
    q.qid = desk::qid_of(static_cast<int>(i));
    const bool answerable = i % 2 == 0;
    q.answerable = answerable;
    q.features.embedding.assign(static_cast<std::size_t>(embed_dim), 0.0);
    q.features.embedding[0] = answerable ? 1.0 : -1.0;
    q.features.embedding[1] = 0.3;
    q.features.meta = {0.4, 0.3, answerable ? 3.0 : 0.4, 0.5, 1.0};
    for (int a = 0; a < ragctl::kNumActions; ++a) {
      ragctl::LoggedRecord rec;
      rec.qid = q.qid;
      rec.action_id = a;
      auto& f = rec.flags;
      if (a == 4) {
        f.refusal = 1;
        f.refusal_correct = answerable ? -1 : 1;
        f.cost_tokens = 4;
      } else if (answerable) {
        f.acc = 1;
        f.hit = 1;
        f.cost_tokens = a == 3 ? 260 : guarded_costs[a];
      } else if (a == 3) {
        f.hall = 1;
        f.cost_tokens = 260;
      } else {
        f.refusal = 1;
        f.refusal_correct = 1;
        f.hit = 0;
        f.cost_tokens = guarded_costs[a];
      }
      f.validate();
      q.records[static_cast<std::size_t>(a)] = std::move(rec);
    }
    ds.questions.push_back(std::move(q));
  }
  return ds;
}

TEST_F(Acceptance, C06_ArgmaxCeRecoversSeparableLabels) {
  begin("C6 separable-recovery");
  const auto ds = separable_dataset(500, 8);
  const auto profile =
      ragctl::find_profile(ragctl::builtin_profiles(), "quality_first");
  const ragctl::TrainConfig cfg;  // defaults: lr 0.1, 200 epochs, ce
  const auto model = ragctl::train_policy(ds, profile, cfg);

  const auto examples = ragctl::make_training_set(ds, profile);
  int agree = 0;
  for (const auto& ex : examples)
    if (ragctl::predict_action(model, ex.x) == ex.label) ++agree;
  EXPECT_GE(agree, 475) << "agreement " << agree << "/500";
  EXPECT_LT(elapsed_seconds(), 30.0);
}

// ----- C7 -----

TEST_F(Acceptance, C07_OracleDominatesEveryFixedAction) {
  begin("C7 oracle-dominance");
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    const auto dataset =
        sweep_desk(60, seed, 16, "oracle_" + std::to_string(seed));
    for (const auto& profile : ragctl::builtin_profiles()) {
      const auto oracle = ragctl::evaluate_oracle(dataset, profile);
      for (int a = 0; a < ragctl::kNumActions; ++a) {
        const auto fixed = ragctl::evaluate_fixed(a, dataset, profile);
        ASSERT_GE(oracle.avg_reward, fixed.avg_reward)
            << "seed " << seed << " profile " << profile.name << " action " << a;
      }
    }
  }
}

// ----- C8 -----

TEST_F(Acceptance, C08_CheapProfileCollapsesToRefusal) {
  begin("C8 refusal-collapse");
  const auto& split = behavioral_split();
  const auto cheap = ragctl::find_profile(ragctl::builtin_profiles(), "cheap");
  ASSERT_GE(cheap.w_ref, cheap.w_acc);

  // Half the corpus is unanswerable and most answerable questions miss.
  int unanswerable = 0;
  for (const auto& q : split.eval.questions)
    if (!q.answerable) ++unanswerable;
  EXPECT_NEAR(static_cast<double>(unanswerable) /
                  static_cast<double>(split.eval.questions.size()),
              0.5, 0.1);

  ragctl::TrainConfig cfg;
  const auto model = ragctl::train_policy(split.train, cheap, cfg);
  const auto metrics =
      ragctl::evaluate_policy_replay(model, split.eval, cheap);
  EXPECT_GE(metrics.refusal_rate, 0.90) << "refusal " << metrics.refusal_rate;
  EXPECT_LE(metrics.accuracy, 0.05) << "accuracy " << metrics.accuracy;
  EXPECT_LT(elapsed_seconds(), 60.0);
}

// ----- C9 -----

TEST_F(Acceptance, C09_QualityFirstProfileKeepsAnswering) {
  begin("C9 quality-first-contrast");
  const auto& split = behavioral_split();
  const auto quality =
      ragctl::find_profile(ragctl::builtin_profiles(), "quality_first");

  ragctl::TrainConfig cfg;
  const auto model = ragctl::train_policy(split.train, quality, cfg);
  const auto metrics =
      ragctl::evaluate_policy_replay(model, split.eval, quality);
  const auto always_refuse = ragctl::evaluate_fixed(4, split.eval, quality);

  EXPECT_LE(metrics.refusal_rate, 0.5) << "refusal " << metrics.refusal_rate;
  EXPECT_GE(metrics.avg_reward, always_refuse.avg_reward)
      << metrics.avg_reward << " vs " << always_refuse.avg_reward;
  EXPECT_LT(elapsed_seconds(), 60.0);
}

// ----- C10 -----

std::string cli_binary() {
  if (const char* env = std::getenv("RAGCTL_BIN")) return env;
  return RAGCTL_BIN_DEFAULT;
}

int run_quiet(const std::string& args, const std::string& sink) {
  const std::string cmd = cli_binary() + " " + args + " >" + sink + " 2>&1";
  const int status = std::system(cmd.c_str());
  return status == -1 ? -1 : WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST_F(Acceptance, C10_PipelineIsByteDeterministic) {
  begin("C10 end-to-end-determinism");
  const std::string base = ::testing::TempDir() + "acceptance_pipeline";
  fs::remove_all(base);
  fs::create_directories(base);
  const std::string out_dir = base + "/out";
  const std::string corpus_path = base + "/corpus.json";
  const std::string config_path = base + "/config.json";
  const std::string sink = base + "/cli_output.txt";
  ragctl::write_file_atomic(corpus_path, desk::squad_json(desk::Spec{}).dump());
  const nlohmann::json cfg{{"corpus_path", corpus_path},
                           {"output_dir", out_dir},
                           {"feature_dim", 32},
                           {"sweep", {{"sample_size", 200}, {"seed", 7}}}};
  ragctl::write_file_atomic(config_path, cfg.dump(2));

  const std::vector<std::string> steps{
      "index -c " + config_path,
      "sweep -c " + config_path,
      "train -c " + config_path + " --slo quality_first",
      "train -c " + config_path + " --slo cheap",
      "eval -c " + config_path + " --slo quality_first",
      "eval -c " + config_path + " --slo cheap",
      "eval -c " + config_path + " --slo quality_first --fixed 1",
      "report -c " + config_path,
  };
  const std::vector<std::string> compared{
      "/model_quality_first_ce.json", "/model_cheap_ce.json",
      "/report/metrics.csv"};

  auto run_pipeline = [&] {
    fs::remove_all(out_dir);
    for (const auto& step : steps)
      ASSERT_EQ(run_quiet(step, sink), 0)
          << "step '" << step << "' failed:\n" << slurp(sink);
  };

  run_pipeline();
  if (HasFatalFailure()) return;
  std::vector<std::string> first_run;
  for (const auto& rel : compared) {
    first_run.push_back(slurp(out_dir + rel));
    ASSERT_FALSE(first_run.back().empty()) << rel;
  }

  run_pipeline();
  if (HasFatalFailure()) return;
  for (std::size_t i = 0; i < compared.size(); ++i)
    EXPECT_EQ(slurp(out_dir + compared[i]), first_run[i])
        << compared[i] << " differs between runs";

  EXPECT_LT(elapsed_seconds(), 60.0);
}

// ----- C11 -----

TEST_F(Acceptance, C11_EveryMissingRecordLineIsDetected) {
  begin("C11 log-integrity");
  ragctl::SimBackend backend;
  ragctl::SweepOptions opt;
  opt.sample_size = 6;
  opt.seed = 4;
  opt.feature_dim = 8;
  const std::string path = ::testing::TempDir() + "acceptance_integrity.jsonl";
  ragctl::run_sweep(desk_corpus(), desk_index(), backend, opt, path);

  std::vector<std::string> lines;
  {
    std::istringstream in(ragctl::read_file(path));
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) lines.push_back(line);
  }
  ASSERT_EQ(lines.size(), 1u + 6u * 5u);

  const std::string truncated = ::testing::TempDir() + "acceptance_truncated.jsonl";
  for (std::size_t victim = 1; victim < lines.size(); ++victim) {
    const std::string qid =
        nlohmann::json::parse(lines[victim]).at("qid").get<std::string>();
    std::string content;
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (i == victim) continue;
      content += lines[i];
      content += '\n';
    }
    ragctl::write_file_atomic(truncated, content);
    try {
      ragctl::read_log(truncated);
      ADD_FAILURE() << "deleting line " << victim + 1 << " went undetected";
    } catch (const ragctl::integrity_error& e) {
      EXPECT_NE(std::string(e.what()).find(qid), std::string::npos)
          << "line " << victim + 1 << ": " << e.what();
    }
  }
}

}  // namespace
