#pragma once
// Closed-form velocity field for a diagonal-Gaussian data distribution under
// the straight-path coupling. Serves as an exactly solvable reference: the
// marginal at time t is N((1-t)*mean, t^2 + (1-t)^2 * var) per coordinate and
// the expected velocity E[eps - x0 | x_t] is affine in x_t.

#include <cmath>
#include <stdexcept>

#include "flowlab/flow.hpp"
#include "flowlab/rng.hpp"
#include "flowlab/vec.hpp"

namespace flowlab {

struct GaussianFlowOracle {
  Vec mean;
  Vec var;  // per-coordinate variance, strictly positive

  void validate() const {
    if (mean.empty() || mean.size() != var.size())
      throw std::invalid_argument("oracle: mean/var size mismatch");
    for (double v : var)
      if (!(v > 0.0)) throw std::invalid_argument("oracle: variances must be positive");
  }

  int dim() const { return int(mean.size()); }

  // Per coordinate: with s2 = t^2 + (1-t)^2 var,
  //   v(x, t) = ((t - (1-t) var) / s2) * (x - (1-t) mean) - mean.
  // At t=0 this is -x (points from data toward noise scale), at t=1 it is
  // x - mean (noise minus the data mean).
  Vec velocity(const Vec& x, double t) const {
    if (x.size() != mean.size()) throw std::invalid_argument("oracle: x has wrong dimension");
    Vec v(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      double omt = 1.0 - t;
      double s2 = t * t + omt * omt * var[i];
      double coef = (t - omt * var[i]) / s2;
      v[i] = coef * (x[i] - omt * mean[i]) - mean[i];
    }
    return v;
  }

  FieldFn field() const {
    GaussianFlowOracle copy = *this;
    return [copy](const Vec& x, double t) { return copy.velocity(x, t); };
  }

  // Unconditioned PriorField wrapper with the diagonal Jacobian.
  PriorField prior_field() const {
    GaussianFlowOracle copy = *this;
    PriorField f;
    f.num_classes = 0;
    f.input_dim = dim();
    f.eval = [copy](const Vec& x, double t, int) { return copy.velocity(x, t); };
    f.vjp_x = [copy](const Vec& x, double t, int, const Vec& u) {
      Vec r(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) {
        double omt = 1.0 - t;
        double s2 = t * t + omt * omt * copy.var[i];
        r[i] = u[i] * (t - omt * copy.var[i]) / s2;
      }
      return r;
    };
    return f;
  }

  Vec sample_data(Rng& rng) const {
    Vec x(mean.size());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = mean[i] + std::sqrt(var[i]) * rng.normal();
    return x;
  }

  // Matching-loss value of the ideal predictor E[eps - x0 | x_t]: the
  // residual variance of eps - x0 given x_t, averaged over t ~ U[0,1] by
  // composite Simpson quadrature.
  double loss_floor(int intervals = 4096) const {
    auto floor_at = [this](double t) {
      double omt = 1.0 - t;
      double acc = 0.0;
      for (double v : var) {
        double s2 = t * t + omt * omt * v;
        double cov = t - omt * v;  // Cov(eps - x0, x_t)
        acc += (1.0 + v) - cov * cov / s2;
      }
      return acc;
    };
    if (intervals % 2 != 0) ++intervals;
    double h = 1.0 / intervals;
    double sum = floor_at(0.0) + floor_at(1.0);
    for (int i = 1; i < intervals; ++i) sum += floor_at(i * h) * (i % 2 ? 4.0 : 2.0);
    return sum * h / 3.0;
  }
};

}  // namespace flowlab
