#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "malab/activations/stats.hpp"
#include "malab/diffusion/schedule.hpp"
#include "malab/diffusion/training.hpp"
#include "malab/dit/config.hpp"
#include "malab/dit/constructed.hpp"
#include "malab/guidance/guidance.hpp"

namespace malab::workbench {

struct TrainSection {
  std::size_t steps = 5000;
  diffusion::TrainOptions options;
  std::size_t log_every = 100;
};

struct RunSection {
  std::uint64_t seed = 0;
  std::string out = "out";
  // Model to load for sample/analyze/intervene/sweep; empty means
  // <out>/model.dgdt. Ignored when a spike section is present.
  std::string checkpoint;
  std::size_t samples = 64;  // per condition
  std::vector<int> conditions;  // empty: every real class
  std::size_t draws = 16;
  double t = 1.5;  // timestep used for detection and alpha profiles
  std::size_t probes = 20;
  std::size_t control_seeds = 5;
  std::size_t projections = 64;
  std::size_t t_points = 10;
  bool grid = false;
};

struct ExperimentConfig {
  dit::DiTConfig model;
  std::optional<dit::SpikePlan> spike;
  diffusion::NoiseSchedule schedule;
  activations::DetectionParams detection;
  guidance::GuidanceSpec guidance;
  TrainSection train;
  RunSection run;

  // Conditions a run iterates over: run.conditions or every real class.
  std::vector<int> conditions() const;
};

// Line-oriented `section.key = value` text; `#` starts a comment. Lists
// are comma separated and may be wrapped in brackets. The model and
// schedule sections are required. guidance.m defaults to blocks / 2
// (at least 1). Throws ConfigError naming the line on
// unknown keys, duplicate keys, malformed or out-of-range values.
ExperimentConfig parse_config(const std::string& text);

// parse_config on a file's contents; IoError when it cannot be read.
ExperimentConfig load_config(const std::string& path);

// Key/value text that parses back to an equal config.
std::string format_config(const ExperimentConfig& config);

}  // namespace malab::workbench
