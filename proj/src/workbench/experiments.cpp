#include "malab/workbench/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <random>
#include <sstream>

#include "malab/diffusion/sampler.hpp"
#include "malab/diffusion/training.hpp"
#include "malab/dit/constructed.hpp"
#include "malab/errors.hpp"
#include "malab/intervention/intervention.hpp"
#include "malab/numerics/ops.hpp"
#include "malab/workbench/checkpoint.hpp"
#include "malab/workbench/csv.hpp"
#include "malab/workbench/metrics.hpp"
#include "malab/workbench/ppm.hpp"

namespace fs = std::filesystem;

namespace malab::workbench {

namespace {

std::string out_path(const ExperimentConfig& config, const std::string& name) {
  return (fs::path(config.run.out) / name).string();
}

void ensure_out(const ExperimentConfig& config) {
  std::error_code ec;
  fs::create_directories(config.run.out, ec);
  if (ec) throw IoError("cannot create output directory '" + config.run.out + "': " + ec.message());
}

std::string join_dims(const std::vector<std::size_t>& dims) {
  std::string s;
  for (std::size_t i = 0; i < dims.size(); ++i) s += (i ? ";" : "") + std::to_string(dims[i]);
  return s;
}

std::vector<int> profile_conditions(const ExperimentConfig& config) {
  std::vector<int> all;
  for (int k = 0; k <= config.model.null_class(); ++k) all.push_back(k);
  return all;
}

// Evenly spaced from sigma_max down to sigma_max / points.
std::vector<double> t_grid(const ExperimentConfig& config) {
  std::vector<double> grid;
  const auto n = config.run.t_points;
  for (std::size_t i = 0; i < n; ++i) {
    grid.push_back(config.schedule.sigma_max * static_cast<double>(n - i) / static_cast<double>(n));
  }
  return grid;
}

std::string markdown_table(const CsvTable& table, std::size_t max_rows) {
  std::ostringstream md;
  md << "|";
  for (const auto& c : table.columns) md << " " << c << " |";
  md << "\n|";
  for (std::size_t i = 0; i < table.columns.size(); ++i) md << " --- |";
  md << "\n";
  const std::size_t shown = std::min(max_rows, table.rows.size());
  for (std::size_t r = 0; r < shown; ++r) {
    md << "|";
    for (const auto& f : table.rows[r]) md << " " << f << " |";
    md << "\n";
  }
  if (shown < table.rows.size()) md << "\n(" << table.rows.size() - shown << " more rows in the CSV)\n";
  return md.str();
}

}  // namespace

diffusion::ToyTask toy_task(const ExperimentConfig& config) {
  if (config.model.data_dim != 2) throw ConfigError("the toy task needs model.data_dim = 2");
  diffusion::ToyTask task;
  task.gmm = diffusion::GMMSpec::ring(config.model.num_classes - 1, 1.0, diffusion::default_mixture().scale);
  task.tokens = config.model.tokens();
  return task;
}

dit::DiTWeights resolve_model(const ExperimentConfig& config) {
  if (config.spike) return dit::make_planted_spike(config.model, *config.spike);
  const std::string path = config.run.checkpoint.empty() ? out_path(config, "model.dgdt") : config.run.checkpoint;
  dit::DiTWeights weights = load_checkpoint(path);
  if (!(weights.config == config.model)) {
    throw ConfigError("checkpoint '" + path + "' was saved for a different model section");
  }
  return weights;
}

activations::MAProfile guidance_profile(const dit::DiTWeights& weights, const ExperimentConfig& config,
                                        std::ostream& log) {
  const auto conditions = profile_conditions(config);
  const activations::DrawOptions draws{config.run.draws, config.run.seed};
  auto profile = activations::build_profile(weights, config.run.t, conditions, config.detection, draws);
  const std::size_t m = config.guidance.intervention.depth;
  if (profile.at(m).empty()) {
    std::vector<activations::ActivationStats> per;
    for (int c : conditions) {
      per.push_back(activations::block_stats(weights, config.run.t, c, draws, config.detection.kappa_tok)[m - 1]);
    }
    const auto avg = activations::average_stats(per);
    const auto top = static_cast<std::size_t>(
        std::max_element(avg.mean_abs.begin(), avg.mean_abs.end()) - avg.mean_abs.begin());
    profile.dims[m - 1] = {top};
    log << "note: no massive activation detected at depth " << m << "; masking the largest dimension " << top
        << " instead\n";
  }
  return profile;
}

SampleRun sample_conditions(const dit::DiTWeights& weights, const ExperimentConfig& config,
                            const activations::MAProfile& profile) {
  const auto task = toy_task(config);
  auto guided = guidance::build_guided_denoiser(weights, config.guidance, profile);
  const diffusion::SampleLayout layout{config.model.tokens(), config.model.data_dim};
  SampleRun run;
  const auto conditions = config.conditions();
  for (int c : conditions) {
    ConditionSamples cs;
    cs.condition = c;
    const std::uint64_t seed = config.run.seed * 1000003ULL + static_cast<std::uint64_t>(c);
    cs.samples = diffusion::euler_sample(guided.denoise, config.schedule, c, seed, config.run.samples, layout);
    std::mt19937_64 rng(seed ^ 0x5eedULL);
    cs.reference = task.sample_class(c, config.run.samples, rng);
    cs.sliced_w2 = sliced_w2(cs.samples, cs.reference, config.run.projections, config.run.seed);
    cs.detail_energy = sample_detail_energy(cs.samples, config.model.grid_h, config.model.grid_w);
    run.sliced_w2 += cs.sliced_w2;
    run.detail_energy += cs.detail_energy;
    run.per_condition.push_back(std::move(cs));
  }
  run.sliced_w2 /= static_cast<double>(conditions.size());
  run.detail_energy /= static_cast<double>(conditions.size());
  run.passes = *guided.passes;
  run.passes_per_step = run.passes / (conditions.size() * config.schedule.steps);
  return run;
}

const std::vector<Metric>& registered_metrics() {
  static const std::vector<Metric> metrics = {
      {"sliced_w2", [](const SampleRun& r) { return r.sliced_w2; }},
      {"detail_energy", [](const SampleRun& r) { return r.detail_energy; }},
  };
  return metrics;
}

void run_train(const ExperimentConfig& config, std::ostream& log) {
  auto weights = dit::init_weights(config.model, config.run.seed);
  auto options = config.train.options;
  options.seed = config.run.seed;
  diffusion::Trainer trainer(weights, toy_task(config), config.schedule, options);
  CsvTable losses{"train_loss", {"step", "loss"}, {}};
  for (std::size_t step = 1; step <= config.train.steps; ++step) {
    const double loss = trainer.step();
    losses.add({step, loss});
    if (step % config.train.log_every == 0 || step == config.train.steps) {
      const auto& all = trainer.losses();
      const std::size_t window = std::min<std::size_t>(config.train.log_every, all.size());
      double trailing = 0.0;
      for (std::size_t i = all.size() - window; i < all.size(); ++i) trailing += all[i];
      log << "step " << step << " loss " << format_number(trailing / static_cast<double>(window)) << "\n";
    }
  }
  weights.set_requires_grad(false);
  ensure_out(config);
  save_checkpoint(weights, out_path(config, "model.dgdt"));
  write_csv(losses, out_path(config, "loss.csv"));
  log << "wrote " << out_path(config, "model.dgdt") << "\n";
}

void run_sample(const ExperimentConfig& config, std::ostream& log) {
  const auto weights = resolve_model(config);
  activations::MAProfile profile;
  if (config.guidance.mode == guidance::Mode::dg || config.guidance.mode == guidance::Mode::cfg_dg) {
    profile = guidance_profile(weights, config, log);
  }
  const auto run = sample_conditions(weights, config, profile);

  CsvTable samples{"samples", {"condition", "sample", "token"}, {}};
  for (std::size_t j = 0; j < config.model.data_dim; ++j) samples.columns.push_back("x" + std::to_string(j));
  CsvTable metrics{"sample_metrics", {"condition", "sliced_w2", "detail_energy"}, {}};
  std::vector<Image> tiles;
  for (const auto& cs : run.per_condition) {
    const auto data = cs.samples.data();
    const std::size_t tokens = cs.samples.dim(1), dim = cs.samples.dim(2);
    for (std::size_t s = 0; s < cs.samples.dim(0); ++s) {
      for (std::size_t k = 0; k < tokens; ++k) {
        std::vector<CsvCell> row{cs.condition, s, k};
        for (std::size_t j = 0; j < dim; ++j) row.emplace_back(data[(s * tokens + k) * dim + j]);
        samples.add(row);
      }
    }
    metrics.add({cs.condition, cs.sliced_w2, cs.detail_energy});
    if (config.run.grid) tiles.push_back(scatter_tile(cs.samples));
  }
  metrics.add({"mean", run.sliced_w2, run.detail_energy});

  ensure_out(config);
  write_csv(samples, out_path(config, "samples.csv"));
  write_csv(metrics, out_path(config, "sample_metrics.csv"));
  if (config.run.grid) write_ppm(tile_grid(tiles, 4), out_path(config, "samples.ppm"));
  log << "mode " << guidance::to_string(config.guidance.mode) << ": " << run.passes << " forward passes, "
      << run.passes_per_step << " per step\n";
  log << "sliced_w2 " << format_number(run.sliced_w2) << " detail_energy " << format_number(run.detail_energy)
      << "\n";
}

void run_analyze(const ExperimentConfig& config, std::ostream& log) {
  const auto weights = resolve_model(config);
  const auto conditions = profile_conditions(config);
  const activations::DrawOptions draws{config.run.draws, config.run.seed};

  CsvTable layers{"layer_profile", {"block", "top1", "top2", "top3", "median", "top1_over_median"}, {}};
  for (const auto& row : activations::layer_profile(weights, config.schedule, conditions, draws,
                                                    config.detection.kappa_tok)) {
    layers.add({row.block, row.top1, row.top2, row.top3, row.median, row.top1 / row.median});
  }

  const auto profile = activations::build_profile(weights, config.run.t, conditions, config.detection, draws);
  CsvTable sets{"ma_sets", {"block", "t", "count", "dims"}, {}};
  for (std::size_t k = 1; k <= profile.blocks(); ++k) {
    sets.add({k, config.run.t, profile.at(k).size(), join_dims(profile.at(k))});
  }

  const auto alphas = activations::alpha_profile(weights, config.run.t, config.model.null_class());
  CsvTable alpha{"alpha_profile", {"block", "argmax", "max_ff", "median_ff", "max_attn", "median_attn"}, {}};
  for (std::size_t k = 0; k < alphas.ff_abs.size(); ++k) {
    const auto& ff = alphas.ff_abs[k];
    const auto& at = alphas.attn_abs[k];
    alpha.add({k + 1, alphas.argmax[k], *std::max_element(ff.begin(), ff.end()), activations::median(ff),
               *std::max_element(at.begin(), at.end()), activations::median(at)});
  }

  ensure_out(config);
  write_csv(layers, out_path(config, "layer_profile.csv"));
  write_csv(sets, out_path(config, "ma_sets.csv"));
  write_csv(alpha, out_path(config, "alpha_profile.csv"));

  if (profile.first_nonempty() == 0) {
    log << "no massive activations detected at t = " << format_number(config.run.t)
        << "; timestep and condition profiles skipped\n";
    return;
  }
  const activations::SweepOptions sweep{0, draws};
  CsvTable timestep{"timestep_profile", {"t", "magnitude"}, {}};
  if (config.run.t_points > 0) {
    const auto grid = t_grid(config);
    const auto magnitudes =
        activations::timestep_sweep(weights, grid, config.model.null_class(), profile, sweep);
    for (std::size_t i = 0; i < grid.size(); ++i) timestep.add({grid[i], magnitudes[i]});
  }
  const auto invariance = activations::condition_invariance(weights, config.run.t, conditions, profile, sweep);
  CsvTable cond{"condition_profile", {"condition", "magnitude"}, {}};
  for (std::size_t i = 0; i < conditions.size(); ++i) cond.add({conditions[i], invariance.magnitudes[i]});
  write_csv(timestep, out_path(config, "timestep_profile.csv"));
  write_csv(cond, out_path(config, "condition_profile.csv"));

  log << "first MA block " << profile.first_nonempty() << ": {" << join_dims(profile.at(profile.first_nonempty()))
      << "}, condition spread " << format_number(invariance.spread) << "\n";
}

void run_intervene(const ExperimentConfig& config, std::ostream& log) {
  const auto weights = resolve_model(config);
  const auto profile = guidance_profile(weights, config, log);
  const std::size_t depth = config.guidance.intervention.depth;

  std::mt19937_64 rng(config.run.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto conditions = profile_conditions(config);
  std::vector<intervention::ProbeInput> probes;
  for (std::size_t i = 0; i < config.run.probes; ++i) {
    const double t = config.schedule.sigma_max * (1.0 - unit(rng));
    const int c = conditions[i % conditions.size()];
    const auto z = activations::draw_inputs(config.model, t, c, 1, config.run.seed + i);
    probes.push_back({reshape(z, {config.model.tokens(), config.model.data_dim}), t, c});
  }
  std::vector<std::uint64_t> seeds;
  for (std::size_t s = 0; s < config.run.control_seeds; ++s) seeds.push_back(config.run.seed + s);
  const auto report = intervention::intervention_report(weights, depth, profile, probes, seeds);

  CsvTable table{"intervention", {"arm", "input", "control_seed", "l2"}, {}};
  for (std::size_t j = 0; j < config.model.data_dim; ++j) table.columns.push_back("rms_x" + std::to_string(j));
  for (const auto& row : report.rows) {
    std::vector<CsvCell> cells{row.arm, row.input, row.control_seed, row.l2};
    for (double v : row.per_dim) cells.emplace_back(v);
    table.add(cells);
  }
  ensure_out(config);
  write_csv(table, out_path(config, "intervention.csv"));
  const double ma = report.median_l2("ma-disrupted"), ctrl = report.median_l2("non-ma-disrupted");
  log << "depth " << depth << " M = {" << join_dims(report.ma_dims) << "}: median l2 ma-disrupted "
      << format_number(ma) << ", non-ma-disrupted " << format_number(ctrl) << "\n";
}

void run_sweep(const ExperimentConfig& config, const std::string& param, const std::vector<double>& values,
               std::ostream& log) {
  if (param != "m" && param != "lambda" && param != "w") {
    throw ConfigError("sweep parameter must be m, lambda or w, got '" + param + "'");
  }
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  const auto weights = resolve_model(config);

  CsvTable table{"sweep", {param, "passes_per_step"}, {}};
  for (const auto& metric : registered_metrics()) table.columns.push_back(metric.name);
  for (double v : values) {
    ExperimentConfig point = config;
    if (param == "m") {
      if (v < 1 || v != std::floor(v) || v > static_cast<double>(config.model.num_blocks)) {
        throw ConfigError("sweep value m = " + format_number(v) + " is not a depth in [1, " +
                          std::to_string(config.model.num_blocks) + "]");
      }
      point.guidance.intervention.depth = static_cast<std::size_t>(v);
    } else if (param == "lambda") {
      point.guidance.lambda = v;
    } else {
      point.guidance.w = v;
    }
    point.guidance.validate();
    activations::MAProfile profile;
    if (point.guidance.mode == guidance::Mode::dg || point.guidance.mode == guidance::Mode::cfg_dg) {
      profile = guidance_profile(weights, point, log);
    }
    const auto run = sample_conditions(weights, point, profile);
    std::vector<CsvCell> row{v, run.passes_per_step};
    for (const auto& metric : registered_metrics()) {
      const double value = metric.value(run);
      if (!std::isfinite(value)) throw NumericError("sweep metric " + metric.name + " is not finite");
      row.emplace_back(value);
    }
    table.add(row);
    log << param << " = " << format_number(v) << " done\n";
  }
  ensure_out(config);
  write_csv(table, out_path(config, "sweep_" + param + ".csv"));
}

void run_report(const ExperimentConfig& config, std::ostream& log) {
  run_analyze(config, log);
  const auto weights = resolve_model(config);
  const auto profile = guidance_profile(weights, config, log);

  CsvTable comparison{"guidance_comparison", {"mode", "lambda", "w", "passes_per_step"}, {}};
  for (const auto& metric : registered_metrics()) comparison.columns.push_back(metric.name);
  for (auto mode : {guidance::Mode::cond, guidance::Mode::cfg, guidance::Mode::dg, guidance::Mode::cfg_dg}) {
    ExperimentConfig point = config;
    point.guidance.mode = mode;
    const auto run = sample_conditions(weights, point, profile);
    const bool uses_lambda = mode == guidance::Mode::cfg || mode == guidance::Mode::cfg_dg;
    const bool uses_w = mode == guidance::Mode::dg || mode == guidance::Mode::cfg_dg;
    std::vector<CsvCell> row{guidance::to_string(mode), uses_lambda ? format_number(point.guidance.lambda) : "-",
                             uses_w ? format_number(point.guidance.w) : "-", run.passes_per_step};
    for (const auto& metric : registered_metrics()) row.emplace_back(metric.value(run));
    comparison.add(row);
  }
  ensure_out(config);
  write_csv(comparison, out_path(config, "guidance_comparison.csv"));

  std::vector<fs::path> csvs;
  for (const auto& entry : fs::directory_iterator(config.run.out)) {
    if (entry.path().extension() == ".csv") csvs.push_back(entry.path());
  }
  std::sort(csvs.begin(), csvs.end());

  std::ostringstream md;
  md << "# malab report\n\n";
  md << "Model: " << config.model.num_blocks << " blocks, hidden " << config.model.hidden_size << ", "
     << config.model.tokens() << " tokens, " << config.model.num_classes - 1 << " classes"
     << (config.spike ? " (planted spike)" : " (trained)") << ".\n";
  md << "Sampler: Euler, " << config.schedule.steps << " steps, sigma_max "
     << format_number(config.schedule.sigma_max) << ". Seed " << config.run.seed << ".\n";
  md << "Guidance depth m = " << config.guidance.intervention.depth << ", masked dims {"
     << join_dims(profile.at(config.guidance.intervention.depth)) << "}.\n";
  for (const auto& path : csvs) {
    const auto table = read_csv(path.string());
    md << "\n## " << path.filename().string() << "\n\n" << markdown_table(table, 40);
  }
  const std::string report_path = out_path(config, "report.md");
  std::ofstream out(report_path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + report_path + "' for writing");
  out << md.str();
  if (!out) throw IoError("failed writing '" + report_path + "'");
  log << "wrote " << report_path << "\n";
}

}  // namespace malab::workbench
