#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ragctl/control.hpp"
#include "ragctl/logstore.hpp"
#include "ragctl/slo.hpp"
#include "ragctl/util.hpp"

namespace ragctl {

inline constexpr int kModelSchemaVersion = 1;

// Linear softmax router over state features: one weight row and bias
// per action.
struct PolicyModel {
  int feature_dim = 0;                 // total dimension (D + 5)
  std::vector<double> weights;         // kNumActions x feature_dim, row-major
  std::array<double, kNumActions> bias{};
  std::string objective;               // "argmax-ce" | "argmax-ce-wt"
  std::string slo_name;
  std::uint64_t seed = 0;
  std::uint64_t corpus_hash = 0;
  std::uint64_t config_hash = 0;
  std::vector<double> loss_trace;      // per-epoch training loss

  static PolicyModel zeros(int feature_dim) {
    PolicyModel m;
    m.feature_dim = feature_dim;
    m.weights.assign(static_cast<std::size_t>(kNumActions) *
                         static_cast<std::size_t>(feature_dim),
                     0.0);
    return m;
  }

  double weight(int action, int j) const {
    return weights[static_cast<std::size_t>(action) *
                       static_cast<std::size_t>(feature_dim) +
                   static_cast<std::size_t>(j)];
  }
};

struct TrainConfig {
  double learning_rate = 0.1;
  int epochs = 200;
  double l2 = 1e-4;
  std::uint64_t seed = 0;
  std::string objective = "ce";  // "ce" | "ce-wt"

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
      throw validation_error("train config: learning_rate must be > 0");
    if (epochs < 0) throw validation_error("train config: epochs must be >= 0");
    if (l2 < 0.0 || !std::isfinite(l2))
      throw validation_error("train config: l2 must be >= 0");
    if (objective != "ce" && objective != "ce-wt")
      throw validation_error("train config: objective must be 'ce' or 'ce-wt'");
  }

  std::string objective_tag() const {
    return objective == "ce" ? "argmax-ce" : "argmax-ce-wt";
  }
};

// Empirically best action with deterministic tie-breaking (lowest id);
// margin is the gap to the second-best of the remaining actions.
inline std::pair<int, double> label_best_action(
    const std::array<double, kNumActions>& rewards) {
  for (double r : rewards)
    if (!std::isfinite(r))
      throw validation_error("label_best_action: rewards must be finite");
  int best = 0;
  for (int a = 1; a < kNumActions; ++a)
    if (rewards[static_cast<std::size_t>(a)] > rewards[static_cast<std::size_t>(best)])
      best = a;
  double second = -std::numeric_limits<double>::infinity();
  for (int a = 0; a < kNumActions; ++a) {
    if (a == best) continue;
    second = std::max(second, rewards[static_cast<std::size_t>(a)]);
  }
  return {best, rewards[static_cast<std::size_t>(best)] - second};
}

// Stable softmax over the action logits; strictly positive entries.
inline std::array<double, kNumActions> forward_softmax(const PolicyModel& model,
                                                       std::span<const double> x) {
  if (static_cast<int>(x.size()) != model.feature_dim)
    throw dimension_error("forward_softmax: feature dimension " +
                          std::to_string(x.size()) + " does not match model " +
                          std::to_string(model.feature_dim));
  std::array<double, kNumActions> logits{};
  for (int a = 0; a < kNumActions; ++a) {
    double z = model.bias[static_cast<std::size_t>(a)];
    const double* row = model.weights.data() +
                        static_cast<std::size_t>(a) *
                            static_cast<std::size_t>(model.feature_dim);
    for (int j = 0; j < model.feature_dim; ++j)
      z += row[j] * x[static_cast<std::size_t>(j)];
    logits[static_cast<std::size_t>(a)] = z;
  }
  double max_logit = logits[0];
  for (double z : logits) max_logit = std::max(max_logit, z);
  std::array<double, kNumActions> probs{};
  double sum = 0.0;
  for (int a = 0; a < kNumActions; ++a) {
    probs[static_cast<std::size_t>(a)] =
        std::exp(logits[static_cast<std::size_t>(a)] - max_logit);
    sum += probs[static_cast<std::size_t>(a)];
  }
  for (double& p : probs) p /= sum;
  return probs;
}

inline int predict_action(const PolicyModel& model, std::span<const double> x) {
  const auto probs = forward_softmax(model, x);
  int best = 0;
  for (int a = 1; a < kNumActions; ++a)
    if (probs[static_cast<std::size_t>(a)] > probs[static_cast<std::size_t>(best)])
      best = a;
  return best;
}

struct WeightedExample {
  std::span<const double> x;
  int label = 0;
  double weight = 1.0;
};

struct LossGrad {
  double loss = 0.0;
  std::vector<double> d_weights;               // same layout as model.weights
  std::array<double, kNumActions> d_bias{};
};

// Weighted cross-entropy over the batch, normalized by the weight sum,
// plus (l2/2)*||W||^2 on the weight matrix (bias unregularized).
inline LossGrad ce_loss_and_grad(const PolicyModel& model,
                                 std::span<const WeightedExample> batch,
                                 double l2) {
  if (batch.empty()) throw validation_error("ce_loss_and_grad: empty batch");
  LossGrad out;
  out.d_weights.assign(model.weights.size(), 0.0);
  double weight_sum = 0.0;
  for (const auto& ex : batch) {
    if (ex.label < 0 || ex.label >= kNumActions)
      throw validation_error("ce_loss_and_grad: label out of range");
    if (ex.weight < 0.0)
      throw validation_error("ce_loss_and_grad: negative example weight");
    weight_sum += ex.weight;
  }
  if (weight_sum <= 0.0)
    throw validation_error("ce_loss_and_grad: weights sum to zero");

  for (const auto& ex : batch) {
    const auto probs = forward_softmax(model, ex.x);
    out.loss -= ex.weight * std::log(probs[static_cast<std::size_t>(ex.label)]);
    for (int a = 0; a < kNumActions; ++a) {
      double g = ex.weight * probs[static_cast<std::size_t>(a)];
      if (a == ex.label) g -= ex.weight;
      g /= weight_sum;
      out.d_bias[static_cast<std::size_t>(a)] += g;
      double* row = out.d_weights.data() +
                    static_cast<std::size_t>(a) *
                        static_cast<std::size_t>(model.feature_dim);
      for (int j = 0; j < model.feature_dim; ++j)
        row[j] += g * ex.x[static_cast<std::size_t>(j)];
    }
  }
  out.loss /= weight_sum;

  double norm_sq = 0.0;
  for (std::size_t i = 0; i < model.weights.size(); ++i) {
    norm_sq += model.weights[i] * model.weights[i];
    out.d_weights[i] += l2 * model.weights[i];
  }
  out.loss += 0.5 * l2 * norm_sq;
  return out;
}

struct LabeledExample {
  std::vector<double> x;
  int label = 0;
  double margin = 0.0;
};

// Derive (features, best action, margin) per question under a profile.
// Rewards are recomputed from the raw flags, never read from the log.
inline std::vector<LabeledExample> make_training_set(const SweepDataset& dataset,
                                                     const SloProfile& profile) {
  std::vector<LabeledExample> out;
  out.reserve(dataset.questions.size());
  for (const auto& q : dataset.questions) {
    std::array<double, kNumActions> rewards{};
    for (int a = 0; a < kNumActions; ++a)
      rewards[static_cast<std::size_t>(a)] =
          compute_reward(q.records[static_cast<std::size_t>(a)].flags, profile);
    const auto [best, margin] = label_best_action(rewards);
    out.push_back(LabeledExample{q.features.flat(), best, margin});
  }
  return out;
}

// CE uses unit weights; CE-WT weights each example by its action margin,
// normalized to mean 1 so the effective learning rate is comparable.
// All-zero margins fall back to unit weights.
inline std::vector<double> objective_weights(const std::vector<LabeledExample>& examples,
                                             const std::string& objective) {
  std::vector<double> w(examples.size(), 1.0);
  if (objective != "ce-wt") return w;
  double sum = 0.0;
  for (const auto& ex : examples) sum += ex.margin;
  if (sum <= 0.0) return w;
  const double mean = sum / static_cast<double>(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) w[i] = examples[i].margin / mean;
  return w;
}

// Full-batch gradient descent from zero initialization; fully
// deterministic for fixed inputs.
inline PolicyModel train_policy(const SweepDataset& train_set,
                                const SloProfile& profile,
                                const TrainConfig& config) {
  config.validate();
  profile.validate();
  if (train_set.questions.empty())
    throw validation_error("train_policy: empty training set");

  const auto examples = make_training_set(train_set, profile);
  const auto weights = objective_weights(examples, config.objective);

  PolicyModel model = PolicyModel::zeros(train_set.header.total_feature_dim());
  model.objective = config.objective_tag();
  model.slo_name = profile.name;
  model.seed = config.seed;
  model.corpus_hash = train_set.header.corpus_hash;
  model.config_hash = train_set.header.config_hash;

  std::vector<WeightedExample> batch;
  batch.reserve(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (static_cast<int>(examples[i].x.size()) != model.feature_dim)
      throw dimension_error("train_policy: example feature dimension mismatch");
    batch.push_back(WeightedExample{examples[i].x, examples[i].label, weights[i]});
  }

  model.loss_trace.reserve(static_cast<std::size_t>(config.epochs));
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    LossGrad lg = ce_loss_and_grad(model, batch, config.l2);
    if (!std::isfinite(lg.loss))
      throw validation_error("train_policy: non-finite loss at epoch " +
                             std::to_string(epoch));
    model.loss_trace.push_back(lg.loss);
    for (std::size_t i = 0; i < model.weights.size(); ++i)
      model.weights[i] -= config.learning_rate * lg.d_weights[i];
    for (int a = 0; a < kNumActions; ++a)
      model.bias[static_cast<std::size_t>(a)] -=
          config.learning_rate * lg.d_bias[static_cast<std::size_t>(a)];
    for (double w : model.weights)
      if (!std::isfinite(w))
        throw validation_error("train_policy: non-finite weight at epoch " +
                               std::to_string(epoch));
  }
  return model;
}

// ----- model artifact (JSON) -----

inline nlohmann::json model_to_json(const PolicyModel& model) {
  return nlohmann::json{{"schema_version", kModelSchemaVersion},
                        {"feature_dim", model.feature_dim},
                        {"objective", model.objective},
                        {"slo", model.slo_name},
                        {"seed", model.seed},
                        {"corpus_hash", to_hex(model.corpus_hash)},
                        {"config_hash", to_hex(model.config_hash)},
                        {"weights", model.weights},
                        {"bias", model.bias},
                        {"loss_trace", model.loss_trace}};
}

inline PolicyModel model_from_json(const nlohmann::json& j) {
  if (!j.contains("schema_version") ||
      j["schema_version"].get<int>() != kModelSchemaVersion)
    throw version_error("policy model: unsupported schema version");
  PolicyModel model;
  model.feature_dim = j.at("feature_dim").get<int>();
  model.objective = j.at("objective").get<std::string>();
  model.slo_name = j.at("slo").get<std::string>();
  model.seed = j.at("seed").get<std::uint64_t>();
  model.corpus_hash = from_hex(j.at("corpus_hash").get<std::string>());
  model.config_hash = from_hex(j.at("config_hash").get<std::string>());
  model.weights = j.at("weights").get<std::vector<double>>();
  model.bias = j.at("bias").get<std::array<double, kNumActions>>();
  model.loss_trace = j.at("loss_trace").get<std::vector<double>>();
  if (model.weights.size() != static_cast<std::size_t>(kNumActions) *
                                  static_cast<std::size_t>(model.feature_dim))
    throw dimension_error("policy model: weight matrix shape mismatch");
  return model;
}

inline void save_model(const std::string& path, const PolicyModel& model) {
  write_file_atomic(path, model_to_json(model).dump());
}

inline PolicyModel load_model(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw parse_error("policy model '" + path + "': " + e.what());
  }
  return model_from_json(j);
}

}  // namespace ragctl
