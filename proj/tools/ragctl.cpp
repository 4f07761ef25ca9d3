#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ragctl/config.hpp"
#include "ragctl/corpus.hpp"
#include "ragctl/evalreport.hpp"
#include "ragctl/generation.hpp"
#include "ragctl/http_backend.hpp"
#include "ragctl/logstore.hpp"
#include "ragctl/policy.hpp"
#include "ragctl/retriever.hpp"
#include "ragctl/slo.hpp"
#include "ragctl/util.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kEvalSchemaVersion = 1;

std::string index_path(const ragctl::RunConfig& cfg) {
  return cfg.output_dir + "/index.json";
}

std::string log_path(const ragctl::RunConfig& cfg) {
  return cfg.output_dir + "/sweep_log.jsonl";
}

std::string model_path(const ragctl::RunConfig& cfg, const std::string& slo,
                       const std::string& objective) {
  return cfg.output_dir + "/model_" + slo + "_" + objective + ".json";
}

std::string eval_path(const ragctl::RunConfig& cfg, const std::string& slo,
                      const std::string& method) {
  return cfg.output_dir + "/eval_" + slo + "_" + method + ".json";
}

void require_artifact(const std::string& path, const std::string& producer) {
  if (!fs::exists(path))
    throw ragctl::validation_error("missing artifact '" + path +
                                   "'; run `ragctl " + producer + "` first");
}

ragctl::SweepDataset read_log_checked(const ragctl::RunConfig& cfg) {
  require_artifact(log_path(cfg), "sweep");
  return ragctl::read_log(log_path(cfg));
}

double effective_eval_fraction(const ragctl::RunConfig& cfg,
                               const ragctl::SweepDataset& dataset) {
  if (cfg.split.eval_fraction) return *cfg.split.eval_fraction;
  return ragctl::default_eval_fraction(dataset.questions.size());
}

void cmd_index(const ragctl::RunConfig& cfg) {
  const ragctl::Corpus corpus = ragctl::load_squad_file(cfg.corpus_path);
  const std::uint64_t hash = ragctl::corpus_hash(corpus);
  const std::string path = index_path(cfg);
  if (fs::exists(path)) {
    try {
      if (ragctl::load_index(path).corpus_hash == hash) {
        std::cout << "index: skipped (hash match)\n";
        return;
      }
    } catch (const std::exception&) {
      // Unreadable or stale artifact: rebuild below.
    }
  }
  const ragctl::InvertedIndex index = ragctl::build_index(corpus.paragraphs);
  ragctl::save_index(path, index, hash);
  std::cout << "index: wrote " << path << " (" << index.num_docs << " docs, "
            << index.vocabulary.size() << " terms)\n";
}

void cmd_sweep(const ragctl::RunConfig& cfg) {
  const ragctl::Corpus corpus = ragctl::load_squad_file(cfg.corpus_path);
  const std::uint64_t hash = ragctl::corpus_hash(corpus);
  require_artifact(index_path(cfg), "index");
  const ragctl::IndexArtifact art = ragctl::load_index(index_path(cfg));
  if (art.corpus_hash != hash)
    throw ragctl::validation_error(
        "index artifact '" + index_path(cfg) +
        "' was built from a different corpus; run `ragctl index` first");

  ragctl::SimBackend sim;
  std::optional<ragctl::HttpBackend> http;
  ragctl::GeneratorBackend* backend = &sim;
  if (cfg.backend.kind == "http") {
    http.emplace(cfg.backend.http);
    backend = &*http;
  }

  ragctl::SweepOptions options;
  options.sample_size = static_cast<std::size_t>(cfg.sweep.sample_size);
  options.seed = cfg.sweep.seed;
  options.feature_dim = cfg.feature_dim;
  options.max_failure_fraction = cfg.sweep.max_failure_fraction;
  options.max_in_flight = cfg.backend.max_in_flight;
  options.corpus_hash = hash;
  options.config_hash = ragctl::config_hash(cfg);

  const ragctl::SweepSummary summary =
      ragctl::run_sweep(corpus, art.index, *backend, options, log_path(cfg));

  nlohmann::json sj = summary.to_json();
  sj["backend"] = backend->name();
  sj["seed"] = options.seed;
  sj["corpus_hash"] = ragctl::to_hex(hash);
  sj["config_hash"] = ragctl::to_hex(options.config_hash);
  sj["log"] = log_path(cfg);
  ragctl::write_file_atomic(cfg.output_dir + "/sweep_summary.json", sj.dump(2));

  std::cout << "sweep: completed " << summary.completed << "/"
            << summary.requested << " questions (" << summary.failed
            << " failed), " << summary.total_cost_tokens
            << " cost tokens -> " << log_path(cfg) << "\n";
}

void cmd_train(const ragctl::RunConfig& cfg, const std::string& slo) {
  const ragctl::SloProfile& profile = ragctl::find_profile(cfg.profiles, slo);
  const ragctl::SweepDataset dataset = read_log_checked(cfg);
  const double fraction = effective_eval_fraction(cfg, dataset);
  auto [train_set, eval_set] =
      ragctl::split_log(dataset, fraction, cfg.split.seed);
  (void)eval_set;

  const ragctl::PolicyModel model =
      ragctl::train_policy(train_set, profile, cfg.train);
  const std::string path = model_path(cfg, slo, cfg.train.objective);
  ragctl::save_model(path, model);
  std::cout << "train: " << slo << "/" << model.objective << " on "
            << train_set.questions.size() << " questions, final loss "
            << (model.loss_trace.empty() ? 0.0 : model.loss_trace.back())
            << " -> " << path << "\n";
}

void cmd_eval(const ragctl::RunConfig& cfg, const std::string& slo,
              const std::optional<std::string>& model_file,
              const std::optional<int>& fixed_action, bool best_fixed) {
  const ragctl::SloProfile& profile = ragctl::find_profile(cfg.profiles, slo);
  const ragctl::SweepDataset dataset = read_log_checked(cfg);
  const double fraction = effective_eval_fraction(cfg, dataset);
  auto [train_set, eval_set] =
      ragctl::split_log(dataset, fraction, cfg.split.seed);
  (void)train_set;

  std::string method;
  ragctl::MetricsReport metrics;
  const auto [bf_id, bf_metrics] = ragctl::best_fixed_action(eval_set, profile);

  if (fixed_action) {
    method = "fixed-a" + std::to_string(*fixed_action);
    metrics = ragctl::evaluate_fixed(*fixed_action, eval_set, profile);
  } else if (best_fixed) {
    method = "best-fixed";
    metrics = bf_metrics;
  } else {
    std::string path = model_file
                           ? *model_file
                           : model_path(cfg, slo, cfg.train.objective);
    require_artifact(path, "train");
    const ragctl::PolicyModel model = ragctl::load_model(path);
    if (model.slo_name != slo)
      std::cerr << "warning: model '" << path << "' was trained for SLO '"
                << model.slo_name << "', evaluating under '" << slo << "'\n";
    method = model.objective;
    metrics = ragctl::evaluate_policy_replay(model, eval_set, profile);
  }

  nlohmann::json j = {
      {"schema_version", kEvalSchemaVersion},
      {"slo", slo},
      {"method", method},
      {"corpus_hash", ragctl::to_hex(dataset.header.corpus_hash)},
      {"config_hash", ragctl::to_hex(ragctl::config_hash(cfg))},
      {"sweep_seed", dataset.header.seed},
      {"split_seed", cfg.split.seed},
      {"eval_fraction", fraction},
      {"metrics", ragctl::metrics_to_json(metrics)},
      {"best_fixed",
       {{"action", bf_id}, {"metrics", ragctl::metrics_to_json(bf_metrics)}}},
      {"created_at", ragctl::utc_timestamp()}};
  const std::string path = eval_path(cfg, slo, method);
  ragctl::write_file_atomic(path, j.dump(2));

  std::cout << "eval: " << slo << "/" << method << " on "
            << metrics.n_questions << " questions: acc "
            << ragctl::detail::fmt_fixed(metrics.accuracy, 3) << ", reward "
            << ragctl::detail::fmt_fixed(metrics.avg_reward, 4) << " -> "
            << path << "\n";
}

void cmd_report(const ragctl::RunConfig& cfg) {
  std::vector<std::string> sources;
  if (fs::is_directory(cfg.output_dir)) {
    for (const auto& entry : fs::directory_iterator(cfg.output_dir)) {
      const std::string name = entry.path().filename().string();
      if (entry.is_regular_file() && name.rfind("eval_", 0) == 0 &&
          name.size() > 10 && name.substr(name.size() - 5) == ".json")
        sources.push_back(name);
    }
  }
  std::sort(sources.begin(), sources.end());
  if (sources.empty())
    throw ragctl::validation_error("no eval artifacts (eval_*.json) in '" +
                                   cfg.output_dir +
                                   "'; run `ragctl eval` first");

  std::vector<ragctl::NamedReport> entries;
  std::string seen_hash;
  for (const std::string& name : sources) {
    const std::string path = cfg.output_dir + "/" + name;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(ragctl::read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
      throw ragctl::parse_error("eval artifact '" + path + "': " + e.what());
    }
    const std::string hash = j.at("corpus_hash").get<std::string>();
    if (seen_hash.empty()) {
      seen_hash = hash;
    } else if (hash != seen_hash) {
      throw ragctl::validation_error(
          "refusing to mix eval artifacts with different corpus hashes (" +
          seen_hash + " vs " + hash + " in '" + name + "')");
    }
    ragctl::NamedReport entry;
    entry.slo = j.at("slo").get<std::string>();
    entry.method = j.at("method").get<std::string>();
    entry.metrics = ragctl::metrics_from_json(j.at("metrics"));
    entry.best_fixed_id = j.at("best_fixed").at("action").get<int>();
    entry.best_fixed =
        ragctl::metrics_from_json(j.at("best_fixed").at("metrics"));
    entries.push_back(std::move(entry));
  }

  const std::string report_dir = cfg.output_dir + "/report";
  ragctl::emit_report(report_dir, entries);
  const nlohmann::json meta = {{"created_at", ragctl::utc_timestamp()},
                               {"corpus_hash", seen_hash},
                               {"config_hash",
                                ragctl::to_hex(ragctl::config_hash(cfg))},
                               {"sources", sources}};
  ragctl::write_file_atomic(report_dir + "/meta.json", meta.dump(2));
  std::cout << "report: " << entries.size() << " rows -> " << report_dir
            << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SLO-conditioned action router for retrieval-augmented QA"};
  app.require_subcommand(1);

  std::string config_file;
  std::string backend_kind;
  int sample_size = 0;
  std::uint64_t sweep_seed = 0;
  std::string slo;
  std::string objective;
  std::string model_file;
  int fixed_action = 0;
  bool best_fixed = false;

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_file, "Path to the JSON run config")
        ->required();
  };

  CLI::App* sub_index =
      app.add_subcommand("index", "Build and persist the retrieval index");
  add_config(sub_index);

  CLI::App* sub_sweep = app.add_subcommand(
      "sweep", "Run the full action sweep and write the replay log");
  add_config(sub_sweep);
  sub_sweep->add_option("--backend", backend_kind, "Generator backend")
      ->check(CLI::IsMember({"sim", "http"}));
  sub_sweep->add_option("--n", sample_size, "Number of questions to sample")
      ->check(CLI::NonNegativeNumber);
  sub_sweep->add_option("--seed", sweep_seed, "Sampling seed");

  CLI::App* sub_train = app.add_subcommand(
      "train", "Train an action router from the sweep log");
  add_config(sub_train);
  sub_train->add_option("--slo", slo, "SLO profile name")->required();
  sub_train->add_option("--objective", objective, "Training objective")
      ->check(CLI::IsMember({"ce", "ce-wt"}));

  CLI::App* sub_eval = app.add_subcommand(
      "eval", "Replay-evaluate a policy on the held-out split");
  add_config(sub_eval);
  sub_eval->add_option("--slo", slo, "SLO profile name")->required();
  CLI::Option* opt_model =
      sub_eval->add_option("--model", model_file, "Path to a trained model");
  CLI::Option* opt_fixed =
      sub_eval->add_option("--fixed", fixed_action, "Fixed action id")
          ->check(CLI::Range(0, 4));
  CLI::Option* opt_best =
      sub_eval->add_flag("--best-fixed", best_fixed,
                         "Evaluate the best fixed action");
  opt_model->excludes(opt_fixed)->excludes(opt_best);
  opt_fixed->excludes(opt_best);

  CLI::App* sub_report = app.add_subcommand(
      "report", "Collate eval artifacts into the metrics table and plot data");
  add_config(sub_report);

  try {
    app.parse(argc, argv);
    ragctl::RunConfig cfg = ragctl::load_config(config_file);
    if (sub_sweep->parsed()) {
      if (sub_sweep->count("--backend") > 0) cfg.backend.kind = backend_kind;
      if (sub_sweep->count("--n") > 0) cfg.sweep.sample_size = sample_size;
      if (sub_sweep->count("--seed") > 0) cfg.sweep.seed = sweep_seed;
      cfg.validate();
    }
    if (sub_train->parsed() && sub_train->count("--objective") > 0) {
      cfg.train.objective = objective;
      cfg.validate();
    }

    if (sub_index->parsed()) {
      cmd_index(cfg);
    } else if (sub_sweep->parsed()) {
      cmd_sweep(cfg);
    } else if (sub_train->parsed()) {
      cmd_train(cfg, slo);
    } else if (sub_eval->parsed()) {
      std::optional<std::string> model_opt;
      if (sub_eval->count("--model") > 0) model_opt = model_file;
      std::optional<int> fixed_opt;
      if (sub_eval->count("--fixed") > 0) fixed_opt = fixed_action;
      cmd_eval(cfg, slo, model_opt, fixed_opt, best_fixed);
    } else if (sub_report->parsed()) {
      cmd_report(cfg);
    }
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "ragctl: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
