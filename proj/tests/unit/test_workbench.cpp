#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "malab/dit/constructed.hpp"
#include "malab/errors.hpp"
#include "malab/workbench/checkpoint.hpp"
#include "malab/workbench/config.hpp"
#include "malab/workbench/csv.hpp"
#include "malab/workbench/experiments.hpp"
#include "malab/workbench/metrics.hpp"
#include "malab/workbench/ppm.hpp"
#include "support/testing.hpp"

using namespace malab;
using namespace malab::workbench;
using malab::testing::random_tensor;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = MALAB_SOURCE_DIR;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << bytes;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("malab_unit_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

dit::DiTWeights random_weights(std::uint64_t seed) {
  dit::DiTConfig cfg;
  cfg.num_blocks = 2;
  cfg.hidden_size = 8;
  cfg.num_heads = 2;
  cfg.num_classes = 3;
  cfg.t_embed_dim = 4;
  cfg.sigma_max = 2.5;
  auto w = dit::init_weights(cfg, seed);
  std::mt19937_64 rng(seed);
  for (auto& [name, t] : w.named_parameters()) *t = random_tensor(t->shape(), rng);
  return w;
}

const char* kToy = R"(
model.blocks = 6
model.hidden = 64
model.heads = 4
model.grid_h = 4
model.grid_w = 4
model.classes = 9
spike.block = 3
spike.dim = 17
spike.magnitude = 100
schedule.sigma_max = 3
schedule.steps = 4
guidance.mode = cfg+dg
guidance.m = 3
run.samples = 4
run.draws = 4
run.conditions = [0, 5]
run.probes = 4
run.control_seeds = 2
run.projections = 8
run.t_points = 4
run.grid = true
)";

ExperimentConfig toy(const fs::path& out) {
  auto c = parse_config(kToy);
  c.run.out = out.string();
  return c;
}

}  // namespace

TEST_CASE("checkpoint round trip at stored precision") {
  const auto dir = scratch("ckpt");
  const auto w = random_weights(1);
  save_checkpoint(w, (dir / "w.dgdt").string());
  const auto back = load_checkpoint((dir / "w.dgdt").string());
  CHECK(back.config == w.config);
  const auto expected = stored_precision(w);
  const auto a = back.named_parameters();
  const auto b = expected.named_parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    CHECK(bitwise_equal(*a[i].second, *b[i].second));
    const auto& original = *w.named_parameters()[i].second;
    for (std::size_t j = 0; j < original.size(); ++j) {
      CHECK(std::abs((*a[i].second)[j] - original[j]) <= std::abs(original[j]) * 0x1p-24);
    }
  }
  // A second trip is exact.
  save_checkpoint(back, (dir / "w2.dgdt").string());
  CHECK(slurp(dir / "w.dgdt") == slurp(dir / "w2.dgdt"));
}

TEST_CASE("checkpoint header layout") {
  const auto dir = scratch("ckpt_layout");
  const auto w = random_weights(2);
  save_checkpoint(w, (dir / "w.dgdt").string());
  const auto bytes = slurp(dir / "w.dgdt");
  CHECK(bytes.substr(0, 4) == "DGDT");
  CHECK(static_cast<unsigned char>(bytes[4]) == 1);
  CHECK(static_cast<unsigned char>(bytes[5]) == 0);
  CHECK(static_cast<unsigned char>(bytes[6]) == 2);  // num_blocks, u32 LE
}

TEST_CASE("checkpoint errors are distinct") {
  const auto dir = scratch("ckpt_errors");
  const auto w = random_weights(3);
  const auto path = (dir / "w.dgdt").string();
  save_checkpoint(w, path);
  const auto good = slurp(path);

  spit(path, "XXXX" + good.substr(4));
  CHECK_THROWS_AS(load_checkpoint(path), BadMagicError);

  auto future = good;
  future[4] = 7;
  spit(path, future);
  CHECK_THROWS_AS(load_checkpoint(path), VersionError);

  spit(path, good.substr(0, good.size() - 3));
  try {
    load_checkpoint(path);
    FAIL("truncated file loaded");
  } catch (const TruncatedError& e) {
    CHECK(std::string(e.what()).find("out.b") != std::string::npos);
  }

  spit(path, good.substr(0, 2));
  CHECK_THROWS_AS(load_checkpoint(path), TruncatedError);
  spit(path, good + "junk");
  CHECK_THROWS_AS(load_checkpoint(path), IoError);
  CHECK_THROWS_AS(load_checkpoint((dir / "missing.dgdt").string()), IoError);
}

TEST_CASE("paper fixtures parse to the table values") {
  const auto paper = kSource / "configs" / "paper";
  const auto sd3 = load_config((paper / "sd3.cfg").string());
  CHECK(sd3.model.num_blocks == 24);
  CHECK(sd3.model.hidden_size == 1536);
  CHECK(sd3.guidance.intervention.dims == std::vector<std::size_t>{810});
  CHECK(sd3.guidance.intervention.depth == 6);
  CHECK(sd3.schedule.steps == 28);
  CHECK(sd3.guidance.mode == guidance::Mode::cfg_dg);
  CHECK(sd3.guidance.lambda == 3.0);
  CHECK(sd3.guidance.w == 1.0);

  const auto alt = load_config((paper / "sd3_dim293.cfg").string());
  CHECK(alt.guidance.intervention.dims == std::vector<std::size_t>{293});

  const auto flux = load_config((paper / "flux.cfg").string());
  CHECK(flux.model.num_blocks == 57);
  CHECK(flux.model.hidden_size == 3072);
  CHECK(flux.guidance.intervention.dims == std::vector<std::size_t>{154, 1446});
  CHECK(flux.guidance.intervention.depth == 22);
  CHECK(flux.schedule.steps == 50);
  CHECK(flux.guidance.lambda == 3.0);
  CHECK(flux.guidance.w == 2.0);

  CHECK(load_config((paper / "flux_cfg.cfg").string()).guidance.lambda == 3.5);
  CHECK(load_config((paper / "sd3.5_dg.cfg").string()).guidance.w == 4.0);
}

TEST_CASE("config validation") {
  const std::string base = "model.blocks = 2\nmodel.hidden = 8\nschedule.steps = 4\n";
  CHECK_NOTHROW(parse_config(base));
  CHECK_THROWS_AS(parse_config(base + "detection.kappa = -1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config(base + "detection.rho = 1.5\n"), ConfigError);
  CHECK_THROWS_AS(parse_config(base + "model.colour = red\n"), ConfigError);
  CHECK_THROWS_AS(parse_config(base + "model.blocks = 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_config(base + "guidance.m = 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_config(base + "guidance.dims = 8\n"), ConfigError);
  CHECK_THROWS_AS(parse_config(base + "guidance.mode = apg\n"), ConfigError);
  CHECK_THROWS_AS(parse_config(base + "schedule.sigma_max = 1e400\n"), ConfigError);
  CHECK_THROWS_AS(parse_config(base + "run.samples = 2.5\n"), ConfigError);
  CHECK_THROWS_AS(parse_config(base + "run.conditions = 8\n"), ConfigError);
  CHECK_THROWS_AS(parse_config(base + "just text\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("model.blocks = 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("schedule.steps = 2\n"), ConfigError);

  const auto c = parse_config(base + "# comment\nguidance.dims = [1, 3]   # trailing\nspike.block = 2\nspike.dim = 5\nrun.grid = true\n");
  CHECK(c.guidance.intervention.dims == std::vector<std::size_t>{1, 3});
  CHECK(c.guidance.intervention.mode == intervention::MaskMode::explicit_dims);
  REQUIRE(c.spike.has_value());
  CHECK(c.spike->block == 2);
  CHECK(c.run.grid);
  CHECK(c.conditions().size() == c.model.num_classes - 1);
}

TEST_CASE("format_config round trips") {
  for (const char* name : {"default.cfg", "planted.cfg", "paper/flux.cfg"}) {
    const auto a = load_config((kSource / "configs" / name).string());
    const auto b = parse_config(format_config(a));
    CHECK(format_config(b) == format_config(a));
  }
}

TEST_CASE("csv matches the golden fixtures") {
  CsvTable t{"golden", {"id", "value", "label"}, {}};
  t.add({1, 1.0 / 3.0, "alpha"});
  t.add({2, 1e-10, "beta"});
  t.add({3, 123456789012.0, "gamma"});
  t.add({4, -2.5, "delta"});
  t.add({5, 0.1 + 0.2, "eps"});
  CHECK(encode_csv(t) == slurp(kSource / "tests/golden/table.csv"));

  const CsvTable empty{"empty", {"step", "loss"}, {}};
  CHECK(encode_csv(empty) == slurp(kSource / "tests/golden/empty.csv"));

  const auto back = read_csv((kSource / "tests/golden/table.csv").string());
  CHECK(back.schema == "golden");
  CHECK(back.rows.size() == 5);
  CHECK(back.number(0, "value") == doctest::Approx(1.0 / 3.0).epsilon(1e-9));
  CHECK_THROWS_AS(read_csv((kSource / "tests/golden/future.csv").string()), VersionError);
  CHECK_THROWS_AS(t.add({1, 2}), std::invalid_argument);
  CHECK_THROWS_AS(t.add({1, 2.0, "a,b"}), std::invalid_argument);
}

TEST_CASE("ppm matches the golden fixtures") {
  Image gray(1, 1, 0.5);
  CHECK(encode_ppm(gray) == std::string("P6\n1 1\n255\n\x80\x80\x80", 14));
  CHECK(encode_ppm(gray) == slurp(kSource / "tests/golden/gray.ppm"));

  Image small(3, 2);
  small.rgb = {0.0, 0.5, 1.0, 0.25, 0.75, 0.1, 0.002, 0.998, 1.0 / 3.0,
               2.0 / 3.0, 0.9, 0.05, 0.6, 0.7, 0.8, 0.123, 0.456, 0.789};
  CHECK(encode_ppm(small) == slurp(kSource / "tests/golden/small.ppm"));

  CHECK(quantize(1.0) == 255);
  CHECK(quantize(0.0) == 0);
  CHECK(quantize(0.5) == 128);
  CHECK_THROWS(quantize(1.01));
  CHECK_THROWS(quantize(-0.01));
  CHECK_THROWS(write_ppm(gray, "/nonexistent/dir/x.ppm"));
}

TEST_CASE("scatter tiles and grids") {
  const Tensor pts({2, 2}, {0.0, 0.0, 1.5, -1.5});
  const auto tile = scatter_tile(pts, {.size = 11, .extent = 1.5});
  CHECK(tile.get(5, 5)[0] < 1.0);
  CHECK(tile.get(10, 10)[0] < 1.0);
  CHECK(tile.get(0, 0)[0] == 1.0);
  const auto grid = tile_grid({tile, tile, tile}, 2, 1);
  CHECK(grid.width == 1 + 2 * 12);
  CHECK(grid.height == 1 + 2 * 12);
}

TEST_CASE("sliced_w2 basics") {
  std::mt19937_64 rng(1);
  const auto a = random_tensor({200, 2}, rng);
  CHECK(sliced_w2(a, a, 16, 0) == 0.0);
  CHECK(sliced_w2(a, a, 16, 3) == sliced_w2(a, a, 16, 3));

  const double vx = 0.3, vy = -0.4;
  std::vector<double> shifted(a.data().begin(), a.data().end());
  for (std::size_t i = 0; i < shifted.size(); i += 2) {
    shifted[i] += vx;
    shifted[i + 1] += vy;
  }
  const double d = sliced_w2(a, Tensor(a.shape(), shifted), 64, 5);
  CHECK(d >= 0.0);
  CHECK(d <= std::hypot(vx, vy) + 1e-9);

  CHECK_THROWS(sliced_w2(a, random_tensor({199, 2}, rng), 4, 0));
  CHECK_THROWS(sliced_w2(Tensor({1, 2}, {0, 0}), Tensor({1, 2}, {1, 1}), 4, 0));
}

TEST_CASE("sliced_w2 agrees with a 10000-projection reference") {
  std::mt19937_64 rng(2);
  const auto a = random_tensor({512, 2}, rng);
  auto b = random_tensor({512, 2}, rng, 1.5);
  std::vector<double> v(b.data().begin(), b.data().end());
  for (std::size_t i = 0; i < v.size(); i += 2) v[i] += 0.7;
  b = Tensor(b.shape(), v);
  // Reference: exact 1-D W2 on an evenly spaced fan of 10000 directions.
  double ref = 0.0;
  for (int k = 0; k < 10000; ++k) {
    const double th = std::numbers::pi * k / 10000.0;
    std::vector<double> pa(512), pb(512);
    for (std::size_t i = 0; i < 512; ++i) {
      pa[i] = a.at(i, 0) * std::cos(th) + a.at(i, 1) * std::sin(th);
      pb[i] = b.at(i, 0) * std::cos(th) + b.at(i, 1) * std::sin(th);
    }
    ref += w2_1d(pa, pb) / 10000.0;
  }
  const double est = sliced_w2(a, b, 64, 11);
  CHECK(std::abs(est - ref) <= 0.05 * ref);
}

TEST_CASE("detail energy") {
  CHECK(detail_energy(Tensor::full({4, 4}, 2.0)) == 0.0);
  std::vector<double> checker, ramp;
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) {
      checker.push_back((i + j) % 2 ? -1.0 : 1.0);
      ramp.push_back(0.3 * i + 0.1 * j);
    }
  const double c = detail_energy(Tensor({5, 5}, checker));
  // Each interior Laplacian is -8 f with f = +-1; variance of the field is 1 - (1/25)^2.
  CHECK(c == doctest::Approx(64.0 / (1.0 - 1.0 / 625.0)).epsilon(1e-12));
  const double r = detail_energy(Tensor({5, 5}, ramp));
  CHECK(r < c);
  CHECK(r == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 10; ++rep) CHECK(detail_energy(random_tensor({5, 5}, rng)) <= c);
  CHECK_THROWS(detail_energy(Tensor::zeros({2, 5})));

  const auto samples = random_tensor({3, 16, 2}, rng);
  CHECK(sample_detail_energy(samples, 4, 4) > 0.0);
  CHECK_THROWS(sample_detail_energy(samples, 2, 8));
}

TEST_CASE("experiments are deterministic and structured") {
  const auto a = scratch("exp_a"), b = scratch("exp_b");
  std::ostringstream log;
  for (const auto& dir : {a, b}) {
    const auto cfg = toy(dir);
    run_analyze(cfg, log);
    run_sample(cfg, log);
    run_intervene(cfg, log);
  }
  for (const char* f : {"layer_profile.csv", "ma_sets.csv", "alpha_profile.csv", "timestep_profile.csv",
                        "condition_profile.csv", "samples.csv", "sample_metrics.csv", "samples.ppm",
                        "intervention.csv"}) {
    INFO(f);
    REQUIRE(fs::exists(a / f));
    CHECK(slurp(a / f) == slurp(b / f));
  }
  CHECK(log.str().find("3 per step") != std::string::npos);

  const auto layers = read_csv((a / "layer_profile.csv").string());
  REQUIRE(layers.rows.size() == 6);
  for (std::size_t k = 0; k < 6; ++k) {
    if (k + 1 >= 3) CHECK(layers.number(k, "top1_over_median") > 30.0);
    else CHECK(layers.number(k, "top1_over_median") < 30.0);
  }
  const auto sets = read_csv((a / "ma_sets.csv").string());
  CHECK(sets.rows[2][sets.column("dims")] == "17");
}

TEST_CASE("sweep over m emits one row per depth") {
  const auto dir = scratch("sweep");
  auto cfg = toy(dir);
  cfg.guidance.mode = guidance::Mode::dg;
  std::ostringstream log;
  run_sweep(cfg, "m", {1, 2, 3, 4, 5, 6}, log);
  const auto t = read_csv((dir / "sweep_m.csv").string());
  REQUIRE(t.rows.size() == 6);
  CHECK(t.columns.size() == 2 + registered_metrics().size());
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(t.number(i, "m") == static_cast<double>(i + 1));
    for (const auto& m : registered_metrics()) CHECK(std::isfinite(t.number(i, m.name)));
  }
  CHECK_THROWS_AS(run_sweep(cfg, "m", {7}, log), ConfigError);
  CHECK_THROWS_AS(run_sweep(cfg, "kappa", {1}, log), ConfigError);
}

TEST_CASE("train, load and report") {
  const auto dir = scratch("train");
  auto cfg = parse_config(
      "model.blocks = 1\nmodel.hidden = 8\nmodel.heads = 2\nmodel.t_embed = 8\nschedule.steps = 3\n"
      "train.steps = 5\ntrain.batch = 4\nrun.samples = 2\nrun.draws = 2\nrun.conditions = [1]\nguidance.m = 1\n");
  cfg.run.out = dir.string();
  std::ostringstream log;
  run_train(cfg, log);
  CHECK(fs::exists(dir / "model.dgdt"));
  CHECK(read_csv((dir / "loss.csv").string()).rows.size() == 5);
  CHECK(resolve_model(cfg).config == cfg.model);
  run_report(cfg, log);
  const auto md = slurp(dir / "report.md");
  CHECK(md.find("guidance_comparison.csv") != std::string::npos);
  CHECK(md.find("layer_profile.csv") != std::string::npos);
  CHECK(read_csv((dir / "guidance_comparison.csv").string()).rows.size() == 4);

  auto other = cfg;
  other.model.hidden_size = 16;
  CHECK_THROWS_AS(resolve_model(other), ConfigError);
}
