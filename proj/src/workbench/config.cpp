#include "malab/workbench/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "malab/errors.hpp"

namespace malab::workbench {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_integer(const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty()) throw ConfigError("expected an integer, got '" + text + "'");
  return value;
}

double parse_double(const std::string& text) {
  double value = 0.0;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty()) throw ConfigError("expected a number, got '" + text + "'");
  if (!std::isfinite(value)) throw ConfigError("value must be finite");
  return value;
}

bool parse_bool(const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("expected true or false, got '" + text + "'");
}

std::vector<std::string> parse_list(std::string text) {
  if (!text.empty() && text.front() == '[') {
    if (text.back() != ']') throw ConfigError("unterminated list '" + text + "'");
    text = text.substr(1, text.size() - 2);
  }
  std::vector<std::string> items;
  if (trim(text).empty()) return items;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) items.push_back(trim(item));
  return items;
}

std::size_t positive(const std::string& text) {
  const auto v = parse_integer<std::size_t>(text);
  if (v == 0) throw ConfigError("value must be positive");
  return v;
}

using Setter = std::function<void(ExperimentConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"model.blocks", [](auto& c, auto& v) { c.model.num_blocks = positive(v); }},
      {"model.hidden", [](auto& c, auto& v) { c.model.hidden_size = positive(v); }},
      {"model.heads", [](auto& c, auto& v) { c.model.num_heads = positive(v); }},
      {"model.grid_h", [](auto& c, auto& v) { c.model.grid_h = positive(v); }},
      {"model.grid_w", [](auto& c, auto& v) { c.model.grid_w = positive(v); }},
      {"model.data_dim", [](auto& c, auto& v) { c.model.data_dim = positive(v); }},
      {"model.classes", [](auto& c, auto& v) { c.model.num_classes = positive(v); }},
      {"model.t_embed", [](auto& c, auto& v) { c.model.t_embed_dim = positive(v); }},

      {"spike.block", [](auto& c, auto& v) { c.spike->block = positive(v); }},
      {"spike.dim", [](auto& c, auto& v) { c.spike->dim = parse_integer<std::size_t>(v); }},
      {"spike.magnitude", [](auto& c, auto& v) { c.spike->magnitude = parse_double(v); }},
      {"spike.time_decay", [](auto& c, auto& v) { c.spike->time_decay = parse_double(v); }},
      {"spike.class_spread", [](auto& c, auto& v) { c.spike->class_spread = parse_double(v); }},
      {"spike.ignore_condition", [](auto& c, auto& v) { c.spike->ignore_condition = parse_bool(v); }},
      {"spike.background_alpha", [](auto& c, auto& v) { c.spike->background_alpha = parse_double(v); }},
      {"spike.seed", [](auto& c, auto& v) { c.spike->seed = parse_integer<std::uint64_t>(v); }},

      {"schedule.sigma_max", [](auto& c, auto& v) { c.schedule.sigma_max = parse_double(v); }},
      {"schedule.steps", [](auto& c, auto& v) { c.schedule.steps = positive(v); }},

      {"detection.kappa", [](auto& c, auto& v) { c.detection.kappa = parse_double(v); }},
      {"detection.rho", [](auto& c, auto& v) { c.detection.rho = parse_double(v); }},
      {"detection.kappa_tok", [](auto& c, auto& v) { c.detection.kappa_tok = parse_double(v); }},

      {"guidance.mode", [](auto& c, auto& v) { c.guidance.mode = guidance::parse_mode(v); }},
      {"guidance.lambda", [](auto& c, auto& v) { c.guidance.lambda = parse_double(v); }},
      {"guidance.w", [](auto& c, auto& v) { c.guidance.w = parse_double(v); }},
      {"guidance.m", [](auto& c, auto& v) { c.guidance.intervention.depth = positive(v); }},
      {"guidance.dims",
       [](auto& c, auto& v) {
         c.guidance.intervention.dims.clear();
         for (const auto& item : parse_list(v)) {
           c.guidance.intervention.dims.push_back(parse_integer<std::size_t>(item));
         }
         c.guidance.intervention.mode = c.guidance.intervention.dims.empty()
                                            ? intervention::MaskMode::ma_detected
                                            : intervention::MaskMode::explicit_dims;
       }},

      {"train.steps", [](auto& c, auto& v) { c.train.steps = positive(v); }},
      {"train.batch", [](auto& c, auto& v) { c.train.options.batch = positive(v); }},
      {"train.lr", [](auto& c, auto& v) { c.train.options.learning_rate = parse_double(v); }},
      {"train.p_drop", [](auto& c, auto& v) { c.train.options.p_drop = parse_double(v); }},
      {"train.log_every", [](auto& c, auto& v) { c.train.log_every = positive(v); }},

      {"run.seed", [](auto& c, auto& v) { c.run.seed = parse_integer<std::uint64_t>(v); }},
      {"run.out", [](auto& c, auto& v) { c.run.out = v; }},
      {"run.checkpoint", [](auto& c, auto& v) { c.run.checkpoint = v; }},
      {"run.samples", [](auto& c, auto& v) { c.run.samples = positive(v); }},
      {"run.conditions",
       [](auto& c, auto& v) {
         c.run.conditions.clear();
         for (const auto& item : parse_list(v)) c.run.conditions.push_back(parse_integer<int>(item));
       }},
      {"run.draws", [](auto& c, auto& v) { c.run.draws = positive(v); }},
      {"run.t", [](auto& c, auto& v) { c.run.t = parse_double(v); }},
      {"run.probes", [](auto& c, auto& v) { c.run.probes = positive(v); }},
      {"run.control_seeds", [](auto& c, auto& v) { c.run.control_seeds = positive(v); }},
      {"run.projections", [](auto& c, auto& v) { c.run.projections = positive(v); }},
      {"run.t_points", [](auto& c, auto& v) { c.run.t_points = parse_integer<std::size_t>(v); }},
      {"run.grid", [](auto& c, auto& v) { c.run.grid = parse_bool(v); }},
  };
  return table;
}

void validate(const ExperimentConfig& c) {
  c.model.validate();
  c.schedule.validate();
  c.detection.validate();
  c.guidance.validate();
  const auto& iv = c.guidance.intervention;
  if (iv.depth > c.model.num_blocks) {
    throw ConfigError("guidance.m = " + std::to_string(iv.depth) + " exceeds model.blocks = " +
                      std::to_string(c.model.num_blocks));
  }
  for (auto d : iv.dims) {
    if (d >= c.model.hidden_size) {
      throw ConfigError("guidance.dims entry " + std::to_string(d) + " outside [0, " +
                        std::to_string(c.model.hidden_size) + ")");
    }
  }
  if (std::set<std::size_t>(iv.dims.begin(), iv.dims.end()).size() != iv.dims.size()) {
    throw ConfigError("guidance.dims has repeated entries");
  }
  if (c.spike) {
    const auto& s = *c.spike;
    if (s.block > c.model.num_blocks) throw ConfigError("spike.block exceeds model.blocks");
    if (s.dim >= c.model.hidden_size) throw ConfigError("spike.dim outside [0, model.hidden)");
    if (!(s.magnitude > 0.0)) throw ConfigError("spike.magnitude must be positive");
    if (s.time_decay < 0.0 || s.time_decay >= 1.0) throw ConfigError("spike.time_decay must lie in [0, 1)");
    if (s.class_spread < 0.0) throw ConfigError("spike.class_spread must be nonnegative");
    if (s.background_alpha < 0.0) throw ConfigError("spike.background_alpha must be nonnegative");
  }
  const auto& o = c.train.options;
  if (!(o.learning_rate > 0.0)) throw ConfigError("train.lr must be positive");
  if (!(o.p_drop >= 0.0 && o.p_drop < 1.0)) throw ConfigError("train.p_drop must lie in [0, 1)");
  if (!(c.run.t > 0.0 && c.run.t <= c.schedule.sigma_max)) throw ConfigError("run.t must lie in (0, sigma_max]");
  if (c.run.t_points == 1) throw ConfigError("run.t_points must be 0 or at least 2");
  for (int k : c.run.conditions) {
    if (k < 0 || k >= c.model.null_class()) {
      throw ConfigError("run.conditions entry " + std::to_string(k) + " is not a real class");
    }
  }
  if (c.run.out.empty()) throw ConfigError("run.out must not be empty");
}

std::string number(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <class T>
std::string join(const std::vector<T>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? ", " : "") + std::to_string(items[i]);
  return "[" + out + "]";
}

}  // namespace

std::vector<int> ExperimentConfig::conditions() const {
  if (!run.conditions.empty()) return run.conditions;
  std::vector<int> all;
  for (int k = 0; k < model.null_class(); ++k) all.push_back(k);
  return all;
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig config;
  std::set<std::string> seen_keys, seen_sections;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    const auto where = "line " + std::to_string(line_no) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'section.key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto dot = key.find('.');
    if (dot == std::string::npos || dot == 0 || dot + 1 == key.size()) {
      throw ConfigError(where + "key '" + key + "' is not of the form section.key");
    }
    auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError(where + "unknown key '" + key + "'");
    if (!seen_keys.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    const std::string section = key.substr(0, dot);
    seen_sections.insert(section);
    if (section == "spike" && !config.spike) config.spike.emplace();
    try {
      it->second(config, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + key + ": " + e.what());
    }
  }
  for (const char* required : {"model", "schedule"}) {
    if (!seen_sections.count(required)) throw ConfigError(std::string("missing required section '") + required + "'");
  }
  config.model.sigma_max = config.schedule.sigma_max;
  if (!seen_keys.count("guidance.m")) {
    config.guidance.intervention.depth = std::max<std::size_t>(1, config.model.num_blocks / 2);
  }
  validate(config);
  return config;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

std::string format_config(const ExperimentConfig& c) {
  std::ostringstream out;
  auto put = [&](const std::string& key, const std::string& value) { out << key << " = " << value << "\n"; };
  put("model.blocks", std::to_string(c.model.num_blocks));
  put("model.hidden", std::to_string(c.model.hidden_size));
  put("model.heads", std::to_string(c.model.num_heads));
  put("model.grid_h", std::to_string(c.model.grid_h));
  put("model.grid_w", std::to_string(c.model.grid_w));
  put("model.data_dim", std::to_string(c.model.data_dim));
  put("model.classes", std::to_string(c.model.num_classes));
  put("model.t_embed", std::to_string(c.model.t_embed_dim));
  if (c.spike) {
    const auto& s = *c.spike;
    put("spike.block", std::to_string(s.block));
    put("spike.dim", std::to_string(s.dim));
    put("spike.magnitude", number(s.magnitude));
    put("spike.time_decay", number(s.time_decay));
    put("spike.class_spread", number(s.class_spread));
    put("spike.ignore_condition", s.ignore_condition ? "true" : "false");
    put("spike.background_alpha", number(s.background_alpha));
    put("spike.seed", std::to_string(s.seed));
  }
  put("schedule.sigma_max", number(c.schedule.sigma_max));
  put("schedule.steps", std::to_string(c.schedule.steps));
  put("detection.kappa", number(c.detection.kappa));
  put("detection.rho", number(c.detection.rho));
  put("detection.kappa_tok", number(c.detection.kappa_tok));
  put("guidance.mode", guidance::to_string(c.guidance.mode));
  put("guidance.lambda", number(c.guidance.lambda));
  put("guidance.w", number(c.guidance.w));
  put("guidance.m", std::to_string(c.guidance.intervention.depth));
  put("guidance.dims", join(c.guidance.intervention.dims));
  put("train.steps", std::to_string(c.train.steps));
  put("train.batch", std::to_string(c.train.options.batch));
  put("train.lr", number(c.train.options.learning_rate));
  put("train.p_drop", number(c.train.options.p_drop));
  put("train.log_every", std::to_string(c.train.log_every));
  put("run.seed", std::to_string(c.run.seed));
  put("run.out", c.run.out);
  if (!c.run.checkpoint.empty()) put("run.checkpoint", c.run.checkpoint);
  put("run.samples", std::to_string(c.run.samples));
  put("run.conditions", join(c.run.conditions));
  put("run.draws", std::to_string(c.run.draws));
  put("run.t", number(c.run.t));
  put("run.probes", std::to_string(c.run.probes));
  put("run.control_seeds", std::to_string(c.run.control_seeds));
  put("run.projections", std::to_string(c.run.projections));
  put("run.t_points", std::to_string(c.run.t_points));
  put("run.grid", c.run.grid ? "true" : "false");
  return out.str();
}

}  // namespace malab::workbench
