#pragma once
// Distillation gradients for fitting a parametric asset against a frozen
// velocity prior, in three flavours:
//  - vfds:   fit-style gradient with a fresh noise draw per step; the
//            network Jacobian term is dropped unless explicitly enabled.
//  - ucm:    coupled gradient; the noise is recovered by push-backward
//            inversion of the current render and treated as a constant.
//  - vf-ism: short unconditional simulation to (x_s, s), then a guided
//            versus unconditional velocity gap at an extrapolated x_t.
// Every stochastic entry point has a deterministic core taking the draws as
// arguments, so oracles and coupling tests can pin them exactly.

#include <chrono>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "flowlab/assets.hpp"
#include "flowlab/errors.hpp"
#include "flowlab/flow.hpp"
#include "flowlab/metrics.hpp"
#include "flowlab/nn.hpp"
#include "flowlab/rng.hpp"
#include "flowlab/vec.hpp"

namespace flowlab {

enum class DistillLoss : std::uint8_t { Vfds = 0, Ucm = 1, VfIsm = 2 };

inline const char* distill_loss_str(DistillLoss l) {
  switch (l) {
    case DistillLoss::Vfds: return "vfds";
    case DistillLoss::Ucm: return "ucm";
    case DistillLoss::VfIsm: return "vf-ism";
  }
  return "?";
}

inline DistillLoss parse_distill_loss(const std::string& s) {
  if (s == "vfds") return DistillLoss::Vfds;
  if (s == "ucm") return DistillLoss::Ucm;
  if (s == "vf-ism") return DistillLoss::VfIsm;
  throw config_error("unknown distillation loss: " + s);
}

// Guidance defaults differ by loss family: fit-style needs a much stronger
// push than the coupled losses.
inline double default_cfg_scale(DistillLoss l) { return l == DistillLoss::Vfds ? 100.0 : 40.0; }

struct VfIsmParams {
  double delta = 0.1;  // unconditional euler step size
  int steps = 3;       // chain length m; the anchor sits at s = steps*delta
};

struct DistillConfig {
  DistillLoss loss = DistillLoss::Vfds;
  double cfg_scale = 100.0;
  int class_id = 1;
  SolverSchedule schedule = SolverSchedule::uniform(SolverMethod::Euler, 3);
  double t_min = 1e-3;
  double t_max = 1.0 - 1e-3;
  int total_steps = 400;
  int warmup_steps = 0;  // leading steps forced to vfds
  double asset_lr = 0.01;
  bool include_jacobian = false;     // vfds only
  double inversion_cfg_scale = 1.0;  // guidance inside the ucm inversion chain
  bool explicit_ds_scale = false;    // re-enable the (t - s) factor in vf-ism
  VfIsmParams vf_ism;
  std::uint64_t seed = 0;
  int coherence_every = 0;  // 0 disables coherence probes
  int coherence_trials = 8;

  void validate() const {
    if (cfg_scale < 0.0) throw config_error("distill: cfg_scale must be non-negative");
    if (class_id < 0) throw config_error("distill: class_id must be non-negative");
    if (!(t_min > 0.0) || !(t_max < 1.0) || !(t_min < t_max))
      throw config_error("distill: need 0 < t_min < t_max < 1");
    if (total_steps < 0) throw config_error("distill: total_steps must be non-negative");
    if (warmup_steps < 0 || warmup_steps > total_steps)
      throw config_error("distill: need 0 <= warmup_steps <= total_steps");
    if (!(asset_lr > 0.0)) throw config_error("distill: asset_lr must be positive");
    if (include_jacobian && loss != DistillLoss::Vfds)
      throw config_error("distill: include_jacobian applies to the vfds loss only");
    if (inversion_cfg_scale < 0.0)
      throw config_error("distill: inversion_cfg_scale must be non-negative");
    schedule.validate();
    if (loss == DistillLoss::VfIsm) {
      if (!(vf_ism.delta > 0.0) || vf_ism.steps < 1)
        throw config_error("distill: vf-ism needs delta > 0 and steps >= 1");
      if (vf_ism.delta * vf_ism.steps >= t_max)
        throw config_error("distill: vf-ism anchor s = steps*delta must sit below t_max");
    }
    if (coherence_every < 0) throw config_error("distill: coherence_every must be non-negative");
    if (coherence_every > 0 && coherence_trials < 2)
      throw config_error("distill: coherence needs at least 2 trials");
  }
};

struct DistillGradient {
  Vec grad_x;
  double t = 0.0;     // matching time the gradient was evaluated at
  long long nfe = 0;  // velocity-field evaluations spent on this gradient
};

// Shared bracket arithmetic: residual between the guided velocity at the
// straight-path point and the coupling direction (noise - x). The noise
// argument is a constant; no gradient flows through it.
inline DistillGradient bracket_gradient(const PriorField& prior, const Vec& x, const Vec& noise,
                                        double t, const DistillConfig& cfg, bool with_jacobian) {
  Vec xt = interpolate(x, noise, t);
  GuidanceConfig guide{cfg.cfg_scale, cfg.class_id};
  Vec guided = guided_velocity(prior, xt, t, guide);
  Vec resid(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) resid[i] = guided[i] - (noise[i] - x[i]);
  DistillGradient out;
  out.t = t;
  out.nfe = 1;
  if (with_jacobian) {
    // Full chain: ((1-t) J^T + I) resid, with J the guided velocity's
    // Jacobian in x_t and (1-t) = dx_t/dx.
    Vec jac = guided_vjp(prior, xt, t, guide, resid);
    out.grad_x.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out.grad_x[i] = resid[i] + (1.0 - t) * jac[i];
  } else {
    out.grad_x = std::move(resid);
  }
  return out;
}

inline DistillGradient vfds_gradient_at(const PriorField& prior, const Vec& x, const Vec& eps,
                                        double t, const DistillConfig& cfg) {
  return bracket_gradient(prior, x, eps, t, cfg, cfg.include_jacobian);
}

// Deterministic ucm core: invert the current render, then apply the shared
// bracket with the recovered noise held constant.
inline DistillGradient ucm_gradient_at(const PriorField& prior, const Vec& x, double t,
                                       const DistillConfig& cfg) {
  FieldFn inversion = bind_field(prior, GuidanceConfig{cfg.inversion_cfg_scale, cfg.class_id});
  Vec e_star = push_backward(inversion, x, cfg.schedule);
  DistillGradient out = bracket_gradient(prior, x, e_star, t, cfg, false);
  out.nfe = cfg.schedule.field_evals() + 1;
  return out;
}

// Deterministic vf-ism core: m unconditional euler steps to the anchor
// (x_s, s), one anchor velocity (reused), a linear hop to x_t, and the
// guided-minus-unconditional gap as the gradient direction.
inline DistillGradient vf_ism_gradient_at(const PriorField& prior, const Vec& x, double t,
                                          const DistillConfig& cfg) {
  double delta = cfg.vf_ism.delta;
  int m = cfg.vf_ism.steps;
  double s = delta * m;
  if (t < s) throw std::invalid_argument("vf-ism: matching time t must not precede the anchor s");
  if (t > 1.0) throw std::invalid_argument("vf-ism: t outside [0, 1]");
  Vec xs = x;
  for (int k = 0; k < m; ++k) {
    Vec v = prior.eval(xs, delta * k, 0);
    if (!all_finite(v)) throw numeric_abort("non-finite field value in vf-ism chain");
    for (std::size_t i = 0; i < xs.size(); ++i) xs[i] += delta * v[i];
  }
  Vec vs = prior.eval(xs, s, 0);
  Vec xt(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) xt[i] = xs[i] + (t - s) * vs[i];
  Vec guided = guided_velocity(prior, xt, t, GuidanceConfig{cfg.cfg_scale, cfg.class_id});
  DistillGradient out;
  out.t = t;
  out.nfe = m + 2;
  out.grad_x.resize(xs.size());
  double scale = cfg.explicit_ds_scale ? (t - s) : 1.0;
  for (std::size_t i = 0; i < xs.size(); ++i) out.grad_x[i] = scale * (guided[i] - vs[i]);
  return out;
}

// Matching-time draw shared by the stochastic wrappers.
inline double draw_matching_time(Rng& rng, double lo, double hi) {
  if (!(lo < hi)) throw std::invalid_argument("matching-time window is empty");
  return lo + (hi - lo) * rng.uniform();
}

// Stochastic wrappers with pinned draw order.
inline DistillGradient vfds_gradient(const PriorField& prior, const Vec& x, Rng& rng,
                                     const DistillConfig& cfg) {
  Vec eps(x.size());
  for (double& e : eps) e = rng.normal();
  double t = draw_matching_time(rng, cfg.t_min, cfg.t_max);
  return vfds_gradient_at(prior, x, eps, t, cfg);
}

inline DistillGradient ucm_gradient(const PriorField& prior, const Vec& x, Rng& rng,
                                    const DistillConfig& cfg) {
  double t = draw_matching_time(rng, cfg.t_min, cfg.t_max);
  return ucm_gradient_at(prior, x, t, cfg);
}

inline DistillGradient vf_ism_gradient(const PriorField& prior, const Vec& x, Rng& rng,
                                       const DistillConfig& cfg) {
  double lo = std::max(cfg.t_min, cfg.vf_ism.delta * cfg.vf_ism.steps);
  double t = draw_matching_time(rng, lo, cfg.t_max);
  return vf_ism_gradient_at(prior, x, t, cfg);
}

inline DistillGradient distill_gradient(const PriorField& prior, const Vec& x, Rng& rng,
                                        const DistillConfig& cfg) {
  switch (cfg.loss) {
    case DistillLoss::Vfds: return vfds_gradient(prior, x, rng, cfg);
    case DistillLoss::Ucm: return ucm_gradient(prior, x, rng, cfg);
    case DistillLoss::VfIsm: return vf_ism_gradient(prior, x, rng, cfg);
  }
  throw std::invalid_argument("unknown distillation loss");
}

// Mean pairwise cosine similarity across independently drawn gradients at a
// fixed render. Near-zero gradients (norm <= 1e-12) count as aligned with
// each other and orthogonal to everything else.
inline double gradient_coherence(const PriorField& prior, const Vec& x, const DistillConfig& cfg,
                                 const Rng& base, int trials) {
  if (trials < 2) throw std::invalid_argument("gradient_coherence: need at least 2 trials");
  std::vector<Vec> grads;
  grads.reserve(std::size_t(trials));
  for (int i = 0; i < trials; ++i) {
    Rng trial_rng = base.fork(std::uint64_t(i));
    grads.push_back(distill_gradient(prior, x, trial_rng, cfg).grad_x);
  }
  double acc = 0.0;
  int pairs = 0;
  for (int i = 0; i < trials; ++i)
    for (int j = i + 1; j < trials; ++j) {
      acc += cosine_similarity(grads[std::size_t(i)], grads[std::size_t(j)]);
      ++pairs;
    }
  return acc / pairs;
}

struct DistillResult {
  Asset asset;
  RunMetrics metrics;
};

// Full distillation loop. Deterministic given the config seed; the coherence
// probes draw from a forked stream so enabling them never alters the
// training trajectory. Per step: sample a view, render, take one distill
// gradient in data space, pull it back through the view transform, and apply
// Adam to the asset parameters. Nothing differentiates through the prior.
inline DistillResult distill_run(Asset asset, const PriorField& prior, const DistillConfig& cfg,
                                 const ViewRanges& views = {}) {
  cfg.validate();
  asset.validate();
  if (prior.num_classes > 0 && cfg.class_id >= prior.num_classes)
    throw config_error("distill: class_id " + std::to_string(cfg.class_id) +
                       " out of range for the prior");
  if (prior.input_dim != asset.dim)
    throw config_error("distill: asset dim does not match the prior input dim");

  Rng train_rng(cfg.seed);
  Rng coherence_base = Rng(cfg.seed).fork(0xC0FEE);
  AdamVecState opt = make_adam_vec(asset.params.size(), AdamConfig{cfg.asset_lr, 0.9, 0.999, 1e-8});

  DistillResult result;
  result.metrics.rows.reserve(std::size_t(cfg.total_steps));
  for (int step = 1; step <= cfg.total_steps; ++step) {
    auto started = std::chrono::steady_clock::now();
    DistillConfig eff = cfg;
    if (step <= cfg.warmup_steps && cfg.loss != DistillLoss::Vfds) {
      eff.loss = DistillLoss::Vfds;
      eff.include_jacobian = false;
    }
    ViewPose pose = sample_view(train_rng, views);
    Vec x = render(asset, pose);
    if (!all_finite(x)) throw numeric_abort("non-finite render", step);

    DistillGradient g = distill_gradient(prior, x, train_rng, eff);
    if (!all_finite(g.grad_x)) throw numeric_abort("non-finite distillation gradient", step);
    Vec pgrad = backprop_view(asset, pose, g.grad_x);
    if (!all_finite(pgrad)) throw numeric_abort("non-finite parameter gradient", step);
    adam_step(opt, asset.params, pgrad);
    if (!all_finite(asset.params)) throw numeric_abort("non-finite asset parameters", step);

    MetricsRow row;
    row.step = step;
    row.loss_tag = distill_loss_str(eff.loss);
    row.residual_norm = l2_norm(g.grad_x);
    row.nfe = g.nfe;
    row.param_norm = l2_norm(asset.params);
    if (cfg.coherence_every > 0 && step % cfg.coherence_every == 0)
      row.coherence = gradient_coherence(prior, x, eff, coherence_base.fork(std::uint64_t(step)),
                                         cfg.coherence_trials);
    row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                            started)
                      .count();
    result.metrics.rows.push_back(std::move(row));
  }

  auto& summary = result.metrics.summary;
  summary.emplace_back("steps", double(cfg.total_steps));
  summary.emplace_back("total_nfe", double(result.metrics.total_nfe()));
  if (!result.metrics.rows.empty()) {
    std::size_t window = std::min<std::size_t>(20, result.metrics.rows.size());
    double tail = 0.0;
    for (std::size_t i = result.metrics.rows.size() - window; i < result.metrics.rows.size(); ++i)
      tail += result.metrics.rows[i].residual_norm;
    summary.emplace_back("final_residual_norm", tail / double(window));
    summary.emplace_back("final_param_norm", result.metrics.rows.back().param_norm);
  }
  result.asset = std::move(asset);
  return result;
}

}  // namespace flowlab
