#pragma once

// Central-difference gradient check of the full model on a tiny instance.

#include <cstdint>
#include <string>
#include <vector>

#include "gvd/decoder.hpp"

namespace gvd {

struct TinyInstance {
  Model model;
  Sample sample;
};

// N=6 regions (2 frames x 3), K=5, T=4 caption tokens with two groundable
// words, m=16, heads=2, e=8, d=8.
TinyInstance make_tiny_instance(std::uint64_t seed, bool self_attention = true);

struct GradcheckOptions {
  std::uint64_t seed = 1;
  double step = 1e-5;
  double threshold = 1e-4;
  std::vector<std::string> presets;  // empty: every preset
};

struct GroupError {
  ParamGroup group;
  double max_abs_diff = 0;
  double scale = 0;  // max(|analytic|_inf, |numeric|_inf, 1e-6)
  double rel = 0;
};

struct PresetCheck {
  std::string preset;
  std::vector<GroupError> groups;
  double max_rel = 0;
};

struct GradcheckResult {
  std::vector<PresetCheck> presets;
  double max_rel = 0;
  bool passed = false;
  double seconds = 0;
  std::size_t parameters = 0;  // scalars perturbed, summed over instances
};

// Throws std::runtime_error naming the group on a non-finite gradient.
GradcheckResult finite_diff_check(const GradcheckOptions& options);

}  // namespace gvd
