#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "ragctl/control.hpp"
#include "ragctl/util.hpp"

namespace ragctl {

// Reward weight vector of one service-level objective. Correct and
// incorrect refusals default to the symmetric weight w_ref; the two
// optional sub-weights make the penalty asymmetric.
struct SloProfile {
  std::string name;
  double w_acc = 0.0;
  double w_cost = 0.0;
  double w_hall = 0.0;
  double w_ref = 0.0;
  double cost_scale = 1000.0;  // tokens per cost unit
  std::optional<double> w_ref_correct;
  std::optional<double> w_ref_incorrect;

  void validate() const {
    auto check = [&](double v, const char* what) {
      if (!std::isfinite(v) || v < 0.0)
        throw validation_error("slo profile '" + name + "': " + what +
                               " must be finite and >= 0");
    };
    check(w_acc, "w_acc");
    check(w_cost, "w_cost");
    check(w_hall, "w_hall");
    check(w_ref, "w_ref");
    if (w_ref_correct) check(*w_ref_correct, "w_ref_correct");
    if (w_ref_incorrect) check(*w_ref_incorrect, "w_ref_incorrect");
    if (!std::isfinite(cost_scale) || cost_scale <= 0.0)
      throw validation_error("slo profile '" + name +
                             "': cost_scale must be finite and > 0");
  }
};

// r = w_acc*Acc - w_cost*(Cost/scale) - w_hall*Hall + w_ref*Ref, with
// Ref in {-1, 0, +1}.
inline double compute_reward(const OutcomeFlags& flags,
                             const SloProfile& profile) {
  double r = profile.w_acc * flags.acc;
  r -= profile.w_cost * (flags.cost_tokens / profile.cost_scale);
  r -= profile.w_hall * flags.hall;
  if (flags.refusal_correct > 0) {
    r += profile.w_ref_correct.value_or(profile.w_ref);
  } else if (flags.refusal_correct < 0) {
    r -= profile.w_ref_incorrect.value_or(profile.w_ref);
  }
  return r;
}

// quality_first weights correctness and hallucination avoidance heavily;
// cheap weights token cost. cost_scale 1000 keeps the cost term in the
// same order of magnitude as the 0/1 terms.
inline std::vector<SloProfile> builtin_profiles() {
  SloProfile quality_first;
  quality_first.name = "quality_first";
  quality_first.w_acc = 1.0;
  quality_first.w_cost = 0.1;
  quality_first.w_hall = 1.0;
  quality_first.w_ref = 0.5;
  SloProfile cheap;
  cheap.name = "cheap";
  cheap.w_acc = 0.5;
  cheap.w_cost = 1.0;
  cheap.w_hall = 0.5;
  cheap.w_ref = 0.5;
  return {quality_first, cheap};
}

// Built-ins plus config-supplied profiles; a config profile with a
// built-in name replaces it.
inline std::vector<SloProfile> builtin_profiles(
    const std::vector<SloProfile>& overrides) {
  std::vector<SloProfile> profiles = builtin_profiles();
  for (const auto& o : overrides) {
    o.validate();
    bool replaced = false;
    for (auto& p : profiles) {
      if (p.name == o.name) {
        p = o;
        replaced = true;
        break;
      }
    }
    if (!replaced) profiles.push_back(o);
  }
  return profiles;
}

inline const SloProfile& find_profile(const std::vector<SloProfile>& profiles,
                                      const std::string& name) {
  for (const auto& p : profiles)
    if (p.name == name) return p;
  throw validation_error("unknown SLO profile '" + name + "'");
}

}  // namespace ragctl
