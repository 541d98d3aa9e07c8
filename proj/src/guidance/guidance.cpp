#include "malab/guidance/guidance.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "malab/errors.hpp"

namespace malab::guidance {

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

}  // namespace

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::cond: return "cond";
    case Mode::cfg: return "cfg";
    case Mode::dg: return "dg";
    case Mode::cfg_dg: return "cfg+dg";
  }
  return "unknown";
}

Mode parse_mode(const std::string& text) {
  if (text == "cond") return Mode::cond;
  if (text == "cfg") return Mode::cfg;
  if (text == "dg") return Mode::dg;
  if (text == "cfg+dg") return Mode::cfg_dg;
  throw ConfigError("unknown guidance mode '" + text + "'");
}

std::size_t passes_per_call(Mode mode) {
  switch (mode) {
    case Mode::cond: return 1;
    case Mode::cfg:
    case Mode::dg: return 2;
    case Mode::cfg_dg: return 3;
  }
  return 0;
}

void GuidanceSpec::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("guidance lambda must be finite and >= 0");
  if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("guidance w must be finite and >= 0");
}

Tensor cfg_combine(const Tensor& cond, const Tensor& uncond, double lambda) {
  require_same(cond, uncond, "cfg_combine");
  const auto c = cond.data(), u = uncond.data();
  std::vector<double> out(c.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::lerp(u[i], c[i], lambda);
  return Tensor(cond.shape(), std::move(out));
}

Tensor dg_combine(const Tensor& base, const Tensor& degraded, double w) {
  require_same(base, degraded, "dg_combine");
  const auto b = base.data(), d = degraded.data();
  std::vector<double> out(b.begin(), b.end());
  if (w != 0.0)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = b[i] + w * (b[i] - d[i]);
  return Tensor(base.shape(), std::move(out));
}

Tensor cfg_dg_combine(const Tensor& cond, const Tensor& uncond, const Tensor& degraded,
                      double lambda, double w) {
  require_same(cond, uncond, "cfg_dg_combine");
  require_same(cond, degraded, "cfg_dg_combine");
  const auto c = cond.data(), u = uncond.data(), d = degraded.data();
  std::vector<double> out(c.begin(), c.end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = c[i];
    if (lambda != 0.0) v = v + lambda * (c[i] - u[i]);
    if (w != 0.0) v = v + w * (c[i] - d[i]);
    out[i] = v;
  }
  return Tensor(cond.shape(), std::move(out));
}

Tensor cfg_anchored(const Tensor& cond, const Tensor& uncond, double lambda) {
  require_same(cond, uncond, "cfg_anchored");
  const auto c = cond.data(), u = uncond.data();
  std::vector<double> out(c.begin(), c.end());
  if (lambda != 0.0)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c[i] + lambda * (c[i] - u[i]);
  return Tensor(cond.shape(), std::move(out));
}

GuidedDenoiser build_guided_denoiser(const dit::DiTWeights& weights, const GuidanceSpec& spec,
                                     const activations::MAProfile& profile) {
  spec.validate();
  auto passes = std::make_shared<std::size_t>(0);
  auto counted = [passes](diffusion::Denoiser d) {
    return [passes, d = std::move(d)](const Tensor& z, double t, int c) {
      ++*passes;
      return d(z, t, c);
    };
  };
  const diffusion::Denoiser base = counted(intervention::base_denoiser(weights));
  diffusion::Denoiser degraded;
  if (spec.mode == Mode::dg || spec.mode == Mode::cfg_dg) {
    degraded = counted(intervention::make_degraded(weights, spec.intervention, profile));
  }
  const int null_id = weights.config.null_class();
  auto require_real = [null_id](int c) {
    if (c == null_id) throw std::invalid_argument("guided sampling with CFG needs a real class, got the null id");
  };

  GuidedDenoiser out{nullptr, passes};
  const double lambda = spec.lambda, w = spec.w;
  switch (spec.mode) {
    case Mode::cond:
      out.denoise = base;
      break;
    case Mode::cfg:
      out.denoise = [=](const Tensor& z, double t, int c) {
        require_real(c);
        const Tensor cond = base(z, t, c);
        const Tensor uncond = base(z, t, null_id);
        return cfg_combine(cond, uncond, lambda);
      };
      break;
    case Mode::dg:
      out.denoise = [=](const Tensor& z, double t, int c) {
        const Tensor cond = base(z, t, c);
        const Tensor deg = degraded(z, t, c);
        return dg_combine(cond, deg, w);
      };
      break;
    case Mode::cfg_dg:
      out.denoise = [=](const Tensor& z, double t, int c) {
        require_real(c);
        const Tensor cond = base(z, t, c);
        const Tensor uncond = base(z, t, null_id);
        const Tensor deg = degraded(z, t, c);
        return cfg_dg_combine(cond, uncond, deg, lambda, w);
      };
      break;
  }
  return out;
}

}  // namespace malab::guidance
