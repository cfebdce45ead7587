#pragma once
// Flow-matching engine: linear-path interpolation, fixed-step ODE solvers for
// generation (t: 1 -> 0) and push-backward inversion (t: 0 -> 1), classifier
// guidance, and the prior training step.

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowlab/errors.hpp"
#include "flowlab/nn.hpp"
#include "flowlab/rng.hpp"
#include "flowlab/vec.hpp"

namespace flowlab {

// Straight-path point t*eps + (1-t)*x0. Endpoints return the argument
// bit-for-bit; interior points use x0 + t*(eps - x0), the same expression an
// Euler push-backward step produces, so the two agree bitwise under ideal
// coupling.
inline Vec interpolate(const Vec& x0, const Vec& eps, double t) {
  check_same_size(x0, eps, "interpolate");
  if (t < 0.0 || t > 1.0) throw std::invalid_argument("interpolate: t outside [0, 1]");
  if (t == 0.0) return x0;
  if (t == 1.0) return eps;
  Vec r(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) r[i] = x0[i] + t * (eps[i] - x0[i]);
  return r;
}

enum class SolverMethod : std::uint8_t { Euler = 0, Midpoint = 1, Rk4 = 2 };

inline int evals_per_step(SolverMethod m) {
  switch (m) {
    case SolverMethod::Euler: return 1;
    case SolverMethod::Midpoint: return 2;
    case SolverMethod::Rk4: return 4;
  }
  throw std::invalid_argument("unknown solver method");
}

inline const char* solver_name(SolverMethod m) {
  switch (m) {
    case SolverMethod::Euler: return "euler";
    case SolverMethod::Midpoint: return "midpoint";
    case SolverMethod::Rk4: return "rk4";
  }
  return "?";
}

inline SolverMethod parse_solver_method(const std::string& s) {
  if (s == "euler") return SolverMethod::Euler;
  if (s == "midpoint") return SolverMethod::Midpoint;
  if (s == "rk4") return SolverMethod::Rk4;
  throw config_error("unknown solver \"" + s + "\" (expected euler, midpoint, or rk4)");
}

struct SolverSchedule {
  SolverMethod method = SolverMethod::Euler;
  std::vector<double> deltas;  // positive, summing to 1 within 1e-12

  static SolverSchedule uniform(SolverMethod m, int steps) {
    if (steps <= 0) throw std::invalid_argument("schedule: steps must be positive");
    return SolverSchedule{m, Vec(std::size_t(steps), 1.0 / steps)};
  }

  int steps() const { return int(deltas.size()); }
  long long field_evals() const { return (long long)(deltas.size()) * evals_per_step(method); }

  void validate() const {
    if (deltas.empty()) throw std::invalid_argument("schedule: no steps");
    double sum = 0.0;
    for (double d : deltas) {
      if (!(d > 0.0)) throw std::invalid_argument("schedule: deltas must be positive");
      sum += d;
    }
    if (std::abs(sum - 1.0) > 1e-12)
      throw std::invalid_argument("schedule: deltas must sum to 1 (got " + std::to_string(sum) +
                                  ")");
  }
};

using FieldFn = std::function<Vec(const Vec&, double)>;

inline Vec eval_field(const FieldFn& field, const Vec& x, double t) {
  Vec v = field(x, t);
  if (v.size() != x.size()) throw std::invalid_argument("field returned wrong dimension");
  if (!all_finite(v)) throw numeric_abort("non-finite field value at t=" + std::to_string(t));
  return v;
}

// Single explicit step of dx/dt = field(x, t) from t to t+dt (dt signed).
inline Vec solver_step(SolverMethod method, const FieldFn& field, const Vec& x, double t,
                       double dt) {
  if (dt == 0.0) throw std::invalid_argument("solver_step: dt must be non-zero");
  if (!all_finite(x)) throw numeric_abort("non-finite solver state at t=" + std::to_string(t));
  switch (method) {
    case SolverMethod::Euler: {
      Vec k1 = eval_field(field, x, t);
      Vec r(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) r[i] = x[i] + dt * k1[i];
      return r;
    }
    case SolverMethod::Midpoint: {
      Vec k1 = eval_field(field, x, t);
      Vec xm(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) xm[i] = x[i] + 0.5 * dt * k1[i];
      Vec k2 = eval_field(field, xm, t + 0.5 * dt);
      Vec r(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) r[i] = x[i] + dt * k2[i];
      return r;
    }
    case SolverMethod::Rk4: {
      Vec k1 = eval_field(field, x, t);
      Vec x2(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) x2[i] = x[i] + 0.5 * dt * k1[i];
      Vec k2 = eval_field(field, x2, t + 0.5 * dt);
      Vec x3(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) x3[i] = x[i] + 0.5 * dt * k2[i];
      Vec k3 = eval_field(field, x3, t + 0.5 * dt);
      Vec x4(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) x4[i] = x[i] + dt * k3[i];
      Vec k4 = eval_field(field, x4, t + dt);
      Vec r(x.size());
      for (std::size_t i = 0; i < x.size(); ++i)
        r[i] = x[i] + (dt / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
      return r;
    }
  }
  throw std::invalid_argument("unknown solver method");
}

// Step boundaries as clamped prefix sums so stage times stay inside [0, 1]
// even when the deltas only sum to 1 within tolerance.
inline std::vector<double> ascending_boundaries(const SolverSchedule& sched) {
  std::vector<double> b(sched.deltas.size() + 1, 0.0);
  for (std::size_t i = 0; i < sched.deltas.size(); ++i)
    b[i + 1] = std::min(b[i] + sched.deltas[i], 1.0);
  return b;
}

// Integrate dx/dt = field from t=1 down to t=0 starting at noise.
inline Vec generate(const FieldFn& field, const Vec& noise, const SolverSchedule& sched) {
  sched.validate();
  std::vector<double> b = ascending_boundaries(sched);
  Vec x = noise;
  for (std::size_t i = sched.deltas.size(); i-- > 0;) {
    double t0 = b[i + 1], t1 = b[i];
    x = solver_step(sched.method, field, x, t0, t1 - t0);
  }
  return x;
}

// Push-backward inversion: integrate x' = +field forward from t=0 to t=1,
// left endpoint first, recovering the noise a data point couples to.
inline Vec push_backward(const FieldFn& field, const Vec& x, const SolverSchedule& sched) {
  sched.validate();
  std::vector<double> b = ascending_boundaries(sched);
  Vec z = x;
  for (std::size_t i = 0; i < sched.deltas.size(); ++i)
    z = solver_step(sched.method, field, z, b[i], b[i + 1] - b[i]);
  return z;
}

// Class-conditional velocity field with an optional vector-Jacobian product
// in x. Wraps either a trained network or an analytic oracle.
struct PriorField {
  std::function<Vec(const Vec&, double, int)> eval;
  std::function<Vec(const Vec&, double, int, const Vec&)> vjp_x;  // may be empty
  int num_classes = 0;
  int input_dim = 0;
};

inline PriorField make_prior_field(Network net) {
  auto shared = std::make_shared<Network>(std::move(net));
  PriorField f;
  f.num_classes = shared->spec.num_classes;
  f.input_dim = shared->spec.input_dim;
  f.eval = [shared](const Vec& x, double t, int class_id) {
    return forward(*shared, x, t, class_id);
  };
  f.vjp_x = [shared](const Vec& x, double t, int class_id, const Vec& u) {
    ForwardTrace trace;
    forward_trace(*shared, x, t, class_id, trace);
    return backward_input(*shared, trace, u);
  };
  return f;
}

struct GuidanceConfig {
  double scale = 1.0;
  int class_id = 0;  // 0 = null label, i.e. unconditional
};

// v_u + scale * (v_c - v_u); collapses to a single evaluation when the scale
// or the class makes the extrapolation exact.
inline Vec guided_velocity(const PriorField& f, const Vec& x, double t, const GuidanceConfig& g) {
  if (g.class_id == 0 || g.scale == 0.0) return f.eval(x, t, 0);
  if (g.scale == 1.0) return f.eval(x, t, g.class_id);
  Vec vu = f.eval(x, t, 0);
  Vec vc = f.eval(x, t, g.class_id);
  Vec r(vu.size());
  for (std::size_t i = 0; i < vu.size(); ++i) r[i] = vu[i] + g.scale * (vc[i] - vu[i]);
  return r;
}

// d/dx (u^T guided_velocity); same special cases as guided_velocity.
inline Vec guided_vjp(const PriorField& f, const Vec& x, double t, const GuidanceConfig& g,
                      const Vec& u) {
  if (!f.vjp_x) throw std::invalid_argument("field has no input-gradient support");
  if (g.class_id == 0 || g.scale == 0.0) return f.vjp_x(x, t, 0, u);
  if (g.scale == 1.0) return f.vjp_x(x, t, g.class_id, u);
  Vec ju = f.vjp_x(x, t, 0, u);
  Vec jc = f.vjp_x(x, t, g.class_id, u);
  Vec r(ju.size());
  for (std::size_t i = 0; i < ju.size(); ++i) r[i] = ju[i] + g.scale * (jc[i] - ju[i]);
  return r;
}

inline FieldFn bind_field(const PriorField& f, const GuidanceConfig& g = {}) {
  return [f, g](const Vec& x, double t) { return guided_velocity(f, x, t, g); };
}

// ---- prior training ----

inline constexpr double kNullLabelProb = 0.1;

struct PriorBatchItem {
  Vec x0;
  int class_id = 0;  // dataset label; 0 allowed for unlabeled data
};

// Randomness consumed by one training step, drawn in a pinned order per item:
// noise components, then t, then the null-label coin.
struct PriorStepDraws {
  std::vector<Vec> eps;
  std::vector<double> t;
  std::vector<int> class_ids;  // after null-label dropout
};

inline PriorStepDraws draw_prior_step(Rng& rng, const std::vector<PriorBatchItem>& batch) {
  PriorStepDraws d;
  d.eps.reserve(batch.size());
  d.t.reserve(batch.size());
  d.class_ids.reserve(batch.size());
  for (const auto& item : batch) {
    Vec eps(item.x0.size());
    for (double& e : eps) e = rng.normal();
    d.eps.push_back(std::move(eps));
    d.t.push_back(rng.uniform());
    bool drop = rng.uniform() < kNullLabelProb;
    d.class_ids.push_back(drop ? 0 : item.class_id);
  }
  return d;
}

// Mean squared velocity-matching loss over the batch, with parameter
// gradients accumulated into grads (a zero_like shape). Returns the loss
// before the update.
inline double prior_loss_and_grads(const Network& net, const std::vector<PriorBatchItem>& batch,
                                   const PriorStepDraws& draws, Network& grads) {
  if (batch.empty()) throw std::invalid_argument("prior training: empty batch");
  double loss = 0.0;
  double inv_b = 1.0 / double(batch.size());
  ForwardTrace trace;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Vec& x0 = batch[i].x0;
    const Vec& eps = draws.eps[i];
    Vec xt = interpolate(x0, eps, draws.t[i]);
    Vec v = forward_trace(net, xt, draws.t[i], draws.class_ids[i], trace);
    Vec upstream(v.size());
    for (std::size_t k = 0; k < v.size(); ++k) {
      double resid = v[k] - (eps[k] - x0[k]);
      loss += resid * resid * inv_b;
      upstream[k] = 2.0 * resid * inv_b;
    }
    Network g = backward_params(net, trace, upstream);
    for (std::size_t l = 0; l < grads.layers.size(); ++l) {
      axpy(1.0, g.layers[l].w.data, grads.layers[l].w.data);
      axpy(1.0, g.layers[l].b, grads.layers[l].b);
    }
    axpy(1.0, g.embed.data, grads.embed.data);
  }
  return loss;
}

// One SGD step: sample (eps, t, label dropout), form the matching loss, apply
// Adam. Returns the pre-update batch loss.
inline double prior_training_step(Network& net, AdamState& opt,
                                  const std::vector<PriorBatchItem>& batch, Rng& rng) {
  PriorStepDraws draws = draw_prior_step(rng, batch);
  Network grads = zero_like(net);
  double loss = prior_loss_and_grads(net, batch, draws, grads);
  if (!std::isfinite(loss)) throw numeric_abort("non-finite training loss");
  adam_step(opt, net, grads);
  return loss;
}

inline double param_norm(const Network& net) {
  double s = 0.0;
  for (const auto& l : net.layers) {
    s += dot(l.w.data, l.w.data);
    s += dot(l.b, l.b);
  }
  s += dot(net.embed.data, net.embed.data);
  return std::sqrt(s);
}

}  // namespace flowlab
