#include <charconv>
#include <cmath>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "malab/errors.hpp"
#include "malab/workbench/config.hpp"
#include "malab/workbench/experiments.hpp"

namespace wb = malab::workbench;

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> mode;
  std::optional<double> lambda;
  std::optional<double> w;
  std::optional<std::size_t> m;
  std::string param;
  std::string values;
};

// "a..b" for an integer range, otherwise a comma-separated list.
std::vector<double> parse_values(const std::string& text) {
  auto number = [](const std::string& s) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
      throw malab::ConfigError("bad sweep value '" + s + "'");
    }
    return v;
  };
  std::vector<double> out;
  if (const auto dots = text.find(".."); dots != std::string::npos) {
    const double lo = number(text.substr(0, dots)), hi = number(text.substr(dots + 2));
    if (lo != std::floor(lo) || hi != std::floor(hi) || hi < lo) {
      throw malab::ConfigError("sweep range '" + text + "' must be ascending integers");
    }
    for (double v = lo; v <= hi; v += 1.0) out.push_back(v);
    return out;
  }
  std::size_t start = 0;
  while (true) {
    const auto comma = text.find(',', start);
    out.push_back(number(text.substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

wb::ExperimentConfig resolve(const Flags& flags) {
  auto config = wb::load_config(flags.config);
  if (flags.seed) config.run.seed = *flags.seed;
  if (flags.out) config.run.out = *flags.out;
  if (flags.mode) config.guidance.mode = malab::guidance::parse_mode(*flags.mode);
  if (flags.lambda) config.guidance.lambda = *flags.lambda;
  if (flags.w) config.guidance.w = *flags.w;
  if (flags.m) config.guidance.intervention.depth = *flags.m;
  // Overrides go through the same validation as the file.
  return wb::parse_config(wb::format_config(config));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"malab: massive-activation and detail-guidance workbench"};
  app.require_subcommand(1);
  Flags flags;

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"train", "train the toy DiT on the planar task and write a checkpoint"},
      {"sample", "guided Euler sampling with sample metrics"},
      {"analyze", "layer, alpha, timestep and condition profiles"},
      {"intervene", "three-arm activation intervention report"},
      {"sweep", "metrics over a grid of m, lambda or w"},
      {"report", "markdown summary of every CSV in the output directory"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", flags.config, "experiment config file")->required();
    sub->add_option("--seed", flags.seed, "run seed");
    sub->add_option("--out", flags.out, "output directory");
    sub->add_option("--mode", flags.mode, "cond | cfg | dg | cfg+dg");
    sub->add_option("--lambda", flags.lambda, "CFG scale");
    sub->add_option("--w", flags.w, "DG scale");
    sub->add_option("--m", flags.m, "intervention depth");
    if (name == "sweep") {
      sub->add_option("--param", flags.param, "m | lambda | w")->required();
      sub->add_option("--values", flags.values, "a..b or a comma-separated list")->required();
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    const auto config = resolve(flags);
    if (command == "train") wb::run_train(config, std::cout);
    if (command == "sample") wb::run_sample(config, std::cout);
    if (command == "analyze") wb::run_analyze(config, std::cout);
    if (command == "intervene") wb::run_intervene(config, std::cout);
    if (command == "sweep") wb::run_sweep(config, flags.param, parse_values(flags.values), std::cout);
    if (command == "report") wb::run_report(config, std::cout);
  } catch (const malab::NumericError& e) {
    std::cerr << "malab " << command << ": numeric error: " << e.what() << "\n";
    return 3;
  } catch (const malab::IoError& e) {
    std::cerr << "malab " << command << ": i/o error: " << e.what() << "\n";
    return 4;
  } catch (const std::invalid_argument& e) {
    std::cerr << "malab " << command << ": config error: " << e.what() << "\n";
    return 2;
  } catch (const std::out_of_range& e) {
    std::cerr << "malab " << command << ": config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "malab " << command << ": " << e.what() << "\n";
    return 1;
  }
  return 0;
}
