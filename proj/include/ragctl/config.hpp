#pragma once

#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ragctl/features.hpp"
#include "ragctl/http_backend.hpp"
#include "ragctl/policy.hpp"
#include "ragctl/slo.hpp"
#include "ragctl/util.hpp"

namespace ragctl {

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j,
                                std::initializer_list<const char*> allowed,
                                const std::string& scope) {
  if (!j.is_object())
    throw schema_error("config: " + scope + " must be an object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* key : allowed)
      if (item.key() == key) {
        known = true;
        break;
      }
    if (!known)
      throw schema_error("config: unknown key '" + item.key() + "' in " +
                         scope);
  }
}

}  // namespace detail

struct BackendSelection {
  std::string kind = "sim";  // "sim" | "http"
  int max_in_flight = 1;
  HttpBackendConfig http;

  void validate() const {
    if (kind != "sim" && kind != "http")
      throw validation_error("config: backend.kind must be 'sim' or 'http'");
    if (max_in_flight < 1)
      throw validation_error("config: backend.max_in_flight must be >= 1");
    if (kind == "http") http.validate();
  }
};

struct SweepConfig {
  int sample_size = 200;
  std::uint64_t seed = 7;
  double max_failure_fraction = 0.1;

  void validate() const {
    if (sample_size < 0)
      throw validation_error("config: sweep.sample_size must be >= 0");
    if (max_failure_fraction < 0.0 || max_failure_fraction > 1.0)
      throw validation_error(
          "config: sweep.max_failure_fraction must be in [0,1]");
  }
};

struct SplitConfig {
  // Unset means the size-dependent default: min(200/n, 0.5).
  std::optional<double> eval_fraction;
  std::uint64_t seed = 13;

  void validate() const {
    if (eval_fraction &&
        !(*eval_fraction > 0.0 && *eval_fraction < 1.0))
      throw validation_error(
          "config: split.eval_fraction must be in (0,1) when set");
  }
};

struct RunConfig {
  std::string corpus_path;
  std::string output_dir = "out";
  int feature_dim = kDefaultEmbeddingDim;
  BackendSelection backend;
  SweepConfig sweep;
  SplitConfig split;
  TrainConfig train;
  std::vector<SloProfile> profiles = builtin_profiles();

  void validate() const {
    if (corpus_path.empty())
      throw validation_error("config: corpus_path must be set");
    if (output_dir.empty())
      throw validation_error("config: output_dir must be set");
    if (feature_dim < 1)
      throw validation_error("config: feature_dim must be >= 1");
    backend.validate();
    sweep.validate();
    split.validate();
    train.validate();
    if (profiles.empty())
      throw validation_error("config: at least one SLO profile is required");
    for (const auto& p : profiles) p.validate();
  }
};

inline RunConfig parse_config(const nlohmann::json& j) {
  detail::reject_unknown_keys(j,
                              {"corpus_path", "output_dir", "feature_dim",
                               "backend", "sweep", "split", "train",
                               "slo_profiles"},
                              "the top level");
  RunConfig cfg;
  if (!j.contains("corpus_path"))
    throw schema_error("config: missing required key 'corpus_path'");
  cfg.corpus_path = j.at("corpus_path").get<std::string>();
  if (j.contains("output_dir"))
    cfg.output_dir = j.at("output_dir").get<std::string>();
  if (j.contains("feature_dim"))
    cfg.feature_dim = j.at("feature_dim").get<int>();

  if (j.contains("backend")) {
    const auto& b = j.at("backend");
    detail::reject_unknown_keys(b, {"kind", "max_in_flight", "http"},
                                "'backend'");
    if (b.contains("kind")) cfg.backend.kind = b.at("kind").get<std::string>();
    if (b.contains("max_in_flight"))
      cfg.backend.max_in_flight = b.at("max_in_flight").get<int>();
    if (b.contains("http")) {
      const auto& h = b.at("http");
      detail::reject_unknown_keys(
          h,
          {"endpoint", "model", "api_key_env", "temperature",
           "max_completion_tokens", "max_retries", "backoff_initial_ms",
           "timeout_seconds"},
          "'backend.http'");
      auto& hc = cfg.backend.http;
      if (h.contains("endpoint"))
        hc.endpoint = h.at("endpoint").get<std::string>();
      if (h.contains("model")) hc.model = h.at("model").get<std::string>();
      if (h.contains("api_key_env"))
        hc.api_key_env = h.at("api_key_env").get<std::string>();
      if (h.contains("temperature"))
        hc.temperature = h.at("temperature").get<double>();
      if (h.contains("max_completion_tokens"))
        hc.max_completion_tokens = h.at("max_completion_tokens").get<int>();
      if (h.contains("max_retries"))
        hc.max_retries = h.at("max_retries").get<int>();
      if (h.contains("backoff_initial_ms"))
        hc.backoff_initial_ms = h.at("backoff_initial_ms").get<int>();
      if (h.contains("timeout_seconds"))
        hc.timeout_seconds = h.at("timeout_seconds").get<int>();
    }
  }

  if (j.contains("sweep")) {
    const auto& s = j.at("sweep");
    detail::reject_unknown_keys(
        s, {"sample_size", "seed", "max_failure_fraction"}, "'sweep'");
    if (s.contains("sample_size"))
      cfg.sweep.sample_size = s.at("sample_size").get<int>();
    if (s.contains("seed"))
      cfg.sweep.seed = s.at("seed").get<std::uint64_t>();
    if (s.contains("max_failure_fraction"))
      cfg.sweep.max_failure_fraction =
          s.at("max_failure_fraction").get<double>();
  }

  if (j.contains("split")) {
    const auto& s = j.at("split");
    detail::reject_unknown_keys(s, {"eval_fraction", "seed"}, "'split'");
    if (s.contains("eval_fraction") && !s.at("eval_fraction").is_null())
      cfg.split.eval_fraction = s.at("eval_fraction").get<double>();
    if (s.contains("seed"))
      cfg.split.seed = s.at("seed").get<std::uint64_t>();
  }

  if (j.contains("train")) {
    const auto& t = j.at("train");
    detail::reject_unknown_keys(
        t, {"learning_rate", "epochs", "l2", "seed", "objective"}, "'train'");
    if (t.contains("learning_rate"))
      cfg.train.learning_rate = t.at("learning_rate").get<double>();
    if (t.contains("epochs")) cfg.train.epochs = t.at("epochs").get<int>();
    if (t.contains("l2")) cfg.train.l2 = t.at("l2").get<double>();
    if (t.contains("seed"))
      cfg.train.seed = t.at("seed").get<std::uint64_t>();
    if (t.contains("objective"))
      cfg.train.objective = t.at("objective").get<std::string>();
  }

  if (j.contains("slo_profiles")) {
    const auto& arr = j.at("slo_profiles");
    if (!arr.is_array())
      throw schema_error("config: 'slo_profiles' must be an array");
    std::vector<SloProfile> overrides;
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const auto& p = arr[i];
      detail::reject_unknown_keys(p,
                                  {"name", "w_acc", "w_cost", "w_hall",
                                   "w_ref", "cost_scale", "w_ref_correct",
                                   "w_ref_incorrect"},
                                  "'slo_profiles[" + std::to_string(i) + "]'");
      SloProfile prof;
      if (!p.contains("name"))
        throw schema_error("config: slo_profiles[" + std::to_string(i) +
                           "] is missing 'name'");
      prof.name = p.at("name").get<std::string>();
      prof.w_acc = p.value("w_acc", prof.w_acc);
      prof.w_cost = p.value("w_cost", prof.w_cost);
      prof.w_hall = p.value("w_hall", prof.w_hall);
      prof.w_ref = p.value("w_ref", prof.w_ref);
      prof.cost_scale = p.value("cost_scale", prof.cost_scale);
      if (p.contains("w_ref_correct"))
        prof.w_ref_correct = p.at("w_ref_correct").get<double>();
      if (p.contains("w_ref_incorrect"))
        prof.w_ref_incorrect = p.at("w_ref_incorrect").get<double>();
      overrides.push_back(std::move(prof));
    }
    cfg.profiles = builtin_profiles(overrides);
  }

  cfg.validate();
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw parse_error("config '" + path + "': " + e.what());
  }
  return parse_config(j);
}

// Canonical serialization of the parsed config: every effective value
// is written back, so the hash covers defaults as well.
inline nlohmann::json config_to_json(const RunConfig& cfg) {
  nlohmann::json profiles = nlohmann::json::array();
  for (const auto& p : cfg.profiles) {
    nlohmann::json pj = {{"name", p.name},       {"w_acc", p.w_acc},
                         {"w_cost", p.w_cost},   {"w_hall", p.w_hall},
                         {"w_ref", p.w_ref},     {"cost_scale", p.cost_scale}};
    if (p.w_ref_correct) pj["w_ref_correct"] = *p.w_ref_correct;
    if (p.w_ref_incorrect) pj["w_ref_incorrect"] = *p.w_ref_incorrect;
    profiles.push_back(std::move(pj));
  }
  nlohmann::json split = {{"seed", cfg.split.seed}};
  if (cfg.split.eval_fraction) split["eval_fraction"] = *cfg.split.eval_fraction;
  return nlohmann::json{
      {"corpus_path", cfg.corpus_path},
      {"output_dir", cfg.output_dir},
      {"feature_dim", cfg.feature_dim},
      {"backend",
       {{"kind", cfg.backend.kind},
        {"max_in_flight", cfg.backend.max_in_flight},
        {"http",
         {{"endpoint", cfg.backend.http.endpoint},
          {"model", cfg.backend.http.model},
          {"api_key_env", cfg.backend.http.api_key_env},
          {"temperature", cfg.backend.http.temperature},
          {"max_completion_tokens", cfg.backend.http.max_completion_tokens},
          {"max_retries", cfg.backend.http.max_retries},
          {"backoff_initial_ms", cfg.backend.http.backoff_initial_ms},
          {"timeout_seconds", cfg.backend.http.timeout_seconds}}}}},
      {"sweep",
       {{"sample_size", cfg.sweep.sample_size},
        {"seed", cfg.sweep.seed},
        {"max_failure_fraction", cfg.sweep.max_failure_fraction}}},
      {"split", split},
      {"train",
       {{"learning_rate", cfg.train.learning_rate},
        {"epochs", cfg.train.epochs},
        {"l2", cfg.train.l2},
        {"seed", cfg.train.seed},
        {"objective", cfg.train.objective}}},
      {"slo_profiles", profiles}};
}

inline std::uint64_t config_hash(const RunConfig& cfg) {
  return fnv1a64(config_to_json(cfg).dump());
}

}  // namespace ragctl
