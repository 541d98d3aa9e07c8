#include "malab/dit/weights.hpp"

#include <cmath>
#include <random>

#include "malab/errors.hpp"

namespace malab::dit {

void DiTConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("DiTConfig: " + msg); };
  if (num_blocks == 0) fail("num_blocks must be positive");
  if (hidden_size < 2) fail("hidden_size must be at least 2");
  if (num_heads == 0 || hidden_size % num_heads != 0) fail("hidden_size must be divisible by num_heads");
  if (grid_h == 0 || grid_w == 0) fail("token grid extents must be positive");
  if (data_dim == 0) fail("data_dim must be positive");
  if (num_classes < 2) fail("num_classes must be at least 2 (one real class plus the null id)");
  if (t_embed_dim == 0 || t_embed_dim % 2 != 0) fail("t_embed_dim must be positive and even");
  if (!(sigma_max > 0.0) || !std::isfinite(sigma_max)) fail("sigma_max must be positive");
}

std::vector<std::pair<std::string, Shape>> parameter_shapes(const DiTConfig& cfg) {
  const auto c = cfg.hidden_size, e = cfg.t_embed_dim, h = cfg.modulation_hidden(), f = cfg.ff_hidden();
  std::vector<std::pair<std::string, Shape>> out{
      {"embed.w", {cfg.data_dim, c}},
      {"embed.b", {c}},
      {"pos", {cfg.tokens(), c}},
      {"class_table", {cfg.num_classes, e}},
  };
  for (std::size_t k = 0; k < cfg.num_blocks; ++k) {
    const std::string p = "blocks." + std::to_string(k) + ".";
    out.insert(out.end(), {
                              {p + "mod.w1_t", {e, h}},
                              {p + "mod.w1_c", {e, h}},
                              {p + "mod.b1", {h}},
                              {p + "mod.w2", {h, 6 * c}},
                              {p + "mod.b2", {6 * c}},
                              {p + "attn.wq", {c, c}},
                              {p + "attn.bq", {c}},
                              {p + "attn.wk", {c, c}},
                              {p + "attn.bk", {c}},
                              {p + "attn.wv", {c, c}},
                              {p + "attn.bv", {c}},
                              {p + "attn.wo", {c, c}},
                              {p + "attn.bo", {c}},
                              {p + "ff.w1", {c, f}},
                              {p + "ff.b1", {f}},
                              {p + "ff.w2", {f, c}},
                              {p + "ff.b2", {c}},
                          });
  }
  out.push_back({"out.w", {c, cfg.data_dim}});
  out.push_back({"out.b", {cfg.data_dim}});
  return out;
}

namespace {

template <typename Self, typename Ptr>
std::vector<std::pair<std::string, Ptr>> collect(Self& w) {
  std::vector<std::pair<std::string, Ptr>> out{
      {"embed.w", &w.embed_w},
      {"embed.b", &w.embed_b},
      {"pos", &w.pos},
      {"class_table", &w.class_table},
  };
  for (std::size_t k = 0; k < w.blocks.size(); ++k) {
    auto& b = w.blocks[k];
    const std::string p = "blocks." + std::to_string(k) + ".";
    out.insert(out.end(), {
                              {p + "mod.w1_t", &b.mod_w1_t},
                              {p + "mod.w1_c", &b.mod_w1_c},
                              {p + "mod.b1", &b.mod_b1},
                              {p + "mod.w2", &b.mod_w2},
                              {p + "mod.b2", &b.mod_b2},
                              {p + "attn.wq", &b.wq},
                              {p + "attn.bq", &b.bq},
                              {p + "attn.wk", &b.wk},
                              {p + "attn.bk", &b.bk},
                              {p + "attn.wv", &b.wv},
                              {p + "attn.bv", &b.bv},
                              {p + "attn.wo", &b.wo},
                              {p + "attn.bo", &b.bo},
                              {p + "ff.w1", &b.ff_w1},
                              {p + "ff.b1", &b.ff_b1},
                              {p + "ff.w2", &b.ff_w2},
                              {p + "ff.b2", &b.ff_b2},
                          });
  }
  out.push_back({"out.w", &w.out_w});
  out.push_back({"out.b", &w.out_b});
  return out;
}

}  // namespace

std::vector<std::pair<std::string, Tensor*>> DiTWeights::named_parameters() {
  return collect<DiTWeights, Tensor*>(*this);
}

std::vector<std::pair<std::string, const Tensor*>> DiTWeights::named_parameters() const {
  return collect<const DiTWeights, const Tensor*>(*this);
}

std::vector<Tensor> DiTWeights::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(*t);
  return out;
}

DiTWeights DiTWeights::clone(bool requires_grad) const {
  DiTWeights copy = *this;
  for (auto& [name, t] : copy.named_parameters()) *t = t->clone(requires_grad);
  return copy;
}

void DiTWeights::set_requires_grad(bool on) {
  for (auto& [name, t] : named_parameters()) t->set_requires_grad(on);
}

DiTWeights init_weights(const DiTConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  DiTWeights w;
  w.config = config;
  w.blocks.resize(config.num_blocks);
  for (auto& [name, shape] : parameter_shapes(config)) {
    Tensor* slot = nullptr;
    for (auto& [n, t] : w.named_parameters()) {
      if (n == name) slot = t;
    }
    const bool is_bias = shape.size() == 1;
    const bool final_mod = name.ends_with("mod.w2") || name.ends_with("mod.b2");
    std::vector<double> values(numel(shape), 0.0);
    if (!is_bias && !final_mod) {
      const bool table = name == "pos" || name == "class_table";
      const double bound = table ? 1.0 : 1.0 / std::sqrt(static_cast<double>(shape[0]));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (auto& v : values) v = dist(rng);
    }
    *slot = Tensor(shape, std::move(values));
  }
  return w;
}

}  // namespace malab::dit
