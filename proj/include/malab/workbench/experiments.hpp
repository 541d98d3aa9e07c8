#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "malab/activations/profile.hpp"
#include "malab/diffusion/gmm.hpp"
#include "malab/dit/weights.hpp"
#include "malab/guidance/guidance.hpp"
#include "malab/numerics/tensor.hpp"
#include "malab/workbench/config.hpp"

namespace malab::workbench {

// The planar token task matching a model config; ConfigError unless the
// config has data_dim 2.
diffusion::ToyTask toy_task(const ExperimentConfig& config);

// The planted model when a spike section is present, otherwise the
// checkpoint named by run.checkpoint (default <out>/model.dgdt).
dit::DiTWeights resolve_model(const ExperimentConfig& config);

// MA profile at run.t over every class including the null id. When the
// guidance depth m has no detected dimension, M_m falls back to the single
// largest mean |z| dimension there and a note goes to log.
activations::MAProfile guidance_profile(const dit::DiTWeights& weights, const ExperimentConfig& config,
                                        std::ostream& log);

struct ConditionSamples {
  int condition = 0;
  Tensor samples;    // [run.samples, tokens, data_dim]
  Tensor reference;  // direct task draws, same shape
  double sliced_w2 = 0.0;
  double detail_energy = 0.0;
};

struct SampleRun {
  std::vector<ConditionSamples> per_condition;
  std::size_t passes = 0;
  std::size_t passes_per_step = 0;
  double sliced_w2 = 0.0;      // mean over conditions
  double detail_energy = 0.0;  // mean over conditions
};

// Guided Euler sampling of run.samples per condition with metrics against
// direct task draws.
SampleRun sample_conditions(const dit::DiTWeights& weights, const ExperimentConfig& config,
                            const activations::MAProfile& profile);

struct Metric {
  std::string name;
  std::function<double(const SampleRun&)> value;
};
// Every metric the sweep and report emit, in column order.
const std::vector<Metric>& registered_metrics();

// Subcommands. Each writes its artifacts under run.out and progress to log.
void run_train(const ExperimentConfig& config, std::ostream& log);
void run_sample(const ExperimentConfig& config, std::ostream& log);
void run_analyze(const ExperimentConfig& config, std::ostream& log);
void run_intervene(const ExperimentConfig& config, std::ostream& log);
// param is one of m, lambda, w.
void run_sweep(const ExperimentConfig& config, const std::string& param, const std::vector<double>& values,
               std::ostream& log);
void run_report(const ExperimentConfig& config, std::ostream& log);

}  // namespace malab::workbench
