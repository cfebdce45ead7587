#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "flowlab/distill.hpp"
#include "flowlab/gaussian_oracle.hpp"
#include "support/finite_diff.hpp"

using namespace flowlab;
using testsupport::central_diff;
using testsupport::rel_err;

namespace {

bool bitwise_equal(const Vec& a, const Vec& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

Network small_prior_net(std::uint64_t seed = 50) {
  NetworkSpec s;
  s.input_dim = 2;
  s.hidden_dims = {12, 12};
  s.time_embed_dim = 3;
  s.num_classes = 3;
  s.cond_embed_dim = 4;
  return init_network(s, seed);
}

DistillConfig oracle_cfg() {
  DistillConfig cfg;
  cfg.class_id = 0;  // analytic oracles are unconditioned
  cfg.cfg_scale = 0.0;
  return cfg;
}

}  // namespace

TEST_CASE("the vfds gradient is the guided residual, recomputed term by term", "[distill]") {
  GaussianFlowOracle oracle{{0.4, -1.2}, {0.5, 1.25}};
  PriorField prior = oracle.prior_field();
  DistillConfig cfg = oracle_cfg();
  Vec x{1.1, -0.3};
  Vec eps{0.6, 0.9};
  double t = 0.44;

  DistillGradient g = vfds_gradient_at(prior, x, eps, t, cfg);
  REQUIRE(g.nfe == 1);
  REQUIRE(g.t == t);

  // Independent recomputation straight from the definitions.
  Vec xt{x[0] + t * (eps[0] - x[0]), x[1] + t * (eps[1] - x[1])};
  Vec v = oracle.velocity(xt, t);
  for (std::size_t i = 0; i < x.size(); ++i) {
    double want = v[i] - (eps[i] - x[i]);
    REQUIRE(g.grad_x[i] == Catch::Approx(want).margin(1e-14));
  }
}

TEST_CASE("the jacobian-augmented vfds gradient differentiates the residual loss", "[distill]") {
  Network net = small_prior_net();
  PriorField prior = make_prior_field(net);
  DistillConfig cfg;
  cfg.cfg_scale = 3.0;
  cfg.class_id = 2;
  cfg.include_jacobian = true;
  Vec eps{0.3, -0.8};
  double t = 0.37;

  Vec x{0.5, 0.2};
  DistillGradient g = vfds_gradient_at(prior, x, eps, t, cfg);

  // The augmented gradient is exactly d/dx of 0.5 ||guided(x_t(x)) - (eps-x)||^2.
  auto loss = [&]() {
    Vec xt = interpolate(x, eps, t);
    Vec guided = guided_velocity(prior, xt, t, {cfg.cfg_scale, cfg.class_id});
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      double r = guided[i] - (eps[i] - x[i]);
      acc += 0.5 * r * r;
    }
    return acc;
  };
  for (std::size_t i = 0; i < x.size(); ++i) {
    double fd = central_diff(loss, x[i]);
    REQUIRE(rel_err(g.grad_x[i], fd) < 1e-6);
  }

  // Without the jacobian the gradient is the bare residual.
  DistillConfig plain = cfg;
  plain.include_jacobian = false;
  DistillGradient g0 = vfds_gradient_at(prior, x, eps, t, plain);
  Vec xt = interpolate(x, eps, t);
  Vec guided = guided_velocity(prior, xt, t, {cfg.cfg_scale, cfg.class_id});
  for (std::size_t i = 0; i < x.size(); ++i)
    REQUIRE(g0.grad_x[i] == guided[i] - (eps[i] - x[i]));
}

TEST_CASE("the ucm core inverts first and brackets with constant noise", "[distill]") {
  GaussianFlowOracle oracle{{0.0, 0.5}, {1.0, 0.8}};
  PriorField prior = oracle.prior_field();
  DistillConfig cfg = oracle_cfg();
  cfg.schedule = SolverSchedule::uniform(SolverMethod::Euler, 4);
  Vec x{0.7, -0.2};
  double t = 0.58;

  DistillGradient g = ucm_gradient_at(prior, x, t, cfg);
  REQUIRE(g.nfe == 5);  // 4 inversion evals + 1 residual eval

  // Hand-rolled inversion with the closed-form field.
  Vec e = x;
  for (int k = 0; k < 4; ++k) {
    Vec v = oracle.velocity(e, 0.25 * k);
    for (std::size_t i = 0; i < e.size(); ++i) e[i] += 0.25 * v[i];
  }
  Vec xt{x[0] + t * (e[0] - x[0]), x[1] + t * (e[1] - x[1])};
  Vec vt = oracle.velocity(xt, t);
  for (std::size_t i = 0; i < x.size(); ++i)
    REQUIRE(g.grad_x[i] == Catch::Approx(vt[i] - (e[i] - x[i])).margin(1e-13));
}

TEST_CASE("forcing vfds to use the inverted noise reproduces ucm bitwise", "[distill]") {
  Network net = small_prior_net(51);
  PriorField prior = make_prior_field(net);
  DistillConfig cfg;
  cfg.loss = DistillLoss::Ucm;
  cfg.cfg_scale = 7.5;
  cfg.class_id = 1;
  cfg.schedule = SolverSchedule::uniform(SolverMethod::Euler, 3);

  Vec x{0.25, -0.6};
  double t = 0.71;
  DistillGradient via_ucm = ucm_gradient_at(prior, x, t, cfg);

  FieldFn inversion = bind_field(prior, GuidanceConfig{cfg.inversion_cfg_scale, cfg.class_id});
  Vec e_star = push_backward(inversion, x, cfg.schedule);
  DistillConfig as_vfds = cfg;
  as_vfds.loss = DistillLoss::Vfds;
  DistillGradient via_vfds = vfds_gradient_at(prior, x, e_star, t, as_vfds);

  REQUIRE(bitwise_equal(via_ucm.grad_x, via_vfds.grad_x));
}

TEST_CASE("the vf-ism core matches an independent forward recomputation", "[distill]") {
  Network net = small_prior_net(52);
  PriorField prior = make_prior_field(net);
  DistillConfig cfg;
  cfg.loss = DistillLoss::VfIsm;
  cfg.cfg_scale = 4.0;
  cfg.class_id = 2;
  cfg.vf_ism.delta = 0.08;
  cfg.vf_ism.steps = 3;

  Vec x{-0.4, 0.9};
  double t = 0.66;
  DistillGradient g = vf_ism_gradient_at(prior, x, t, cfg);
  REQUIRE(g.nfe == 5);  // 3 chain evals + anchor eval + guided eval

  // Recompute with raw network forwards only.
  double s = 0.24;
  Vec xs = x;
  for (int k = 0; k < 3; ++k) {
    Vec v = forward(net, xs, 0.08 * k, 0);
    for (std::size_t i = 0; i < xs.size(); ++i) xs[i] += 0.08 * v[i];
  }
  Vec vs = forward(net, xs, s, 0);
  Vec xt(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) xt[i] = xs[i] + (t - s) * vs[i];
  Vec vu = forward(net, xt, t, 0);
  Vec vc = forward(net, xt, t, 2);
  for (std::size_t i = 0; i < x.size(); ++i) {
    double guided = vu[i] + cfg.cfg_scale * (vc[i] - vu[i]);
    REQUIRE(g.grad_x[i] == Catch::Approx(guided - vs[i]).margin(1e-10));
  }

  // Optional explicit step-scale multiplies the direction by (t - s).
  DistillConfig scaled = cfg;
  scaled.explicit_ds_scale = true;
  DistillGradient gs = vf_ism_gradient_at(prior, x, t, scaled);
  for (std::size_t i = 0; i < x.size(); ++i)
    REQUIRE(gs.grad_x[i] == Catch::Approx((t - s) * g.grad_x[i]).margin(1e-12));

  REQUIRE_THROWS_AS(vf_ism_gradient_at(prior, x, 0.1, cfg), std::invalid_argument);
}

TEST_CASE("stochastic wrappers have a pinned draw order", "[distill]") {
  GaussianFlowOracle oracle{{0.0, 0.0}, {1.0, 1.0}};
  PriorField prior = oracle.prior_field();
  DistillConfig cfg = oracle_cfg();
  Vec x{0.4, 0.1};

  Rng r1(9);
  DistillGradient g1 = vfds_gradient(prior, x, r1, cfg);
  Rng r2(9);
  Vec eps{r2.normal(), r2.normal()};
  double t = cfg.t_min + (cfg.t_max - cfg.t_min) * r2.uniform();
  DistillGradient g2 = vfds_gradient_at(prior, x, eps, t, cfg);
  REQUIRE(bitwise_equal(g1.grad_x, g2.grad_x));
  REQUIRE(g1.t == t);

  Rng r3(10), r4(10);
  DistillGradient u1 = ucm_gradient(prior, x, r3, cfg);
  double tu = cfg.t_min + (cfg.t_max - cfg.t_min) * r4.uniform();
  DistillGradient u2 = ucm_gradient_at(prior, x, tu, cfg);
  REQUIRE(u1.t == tu);
  REQUIRE(bitwise_equal(u1.grad_x, u2.grad_x));

  // vf-ism draws t from [max(t_min, s), t_max).
  DistillConfig vcfg = oracle_cfg();
  vcfg.loss = DistillLoss::VfIsm;
  vcfg.vf_ism.delta = 0.1;
  vcfg.vf_ism.steps = 3;
  Rng r5(11), r6(11);
  DistillGradient v1 = vf_ism_gradient(prior, x, r5, vcfg);
  double tv = 0.3 + (vcfg.t_max - 0.3) * r6.uniform();
  REQUIRE(v1.t == tv);
}

TEST_CASE("coherence is exactly one for a self-consistent coupled gradient", "[distill]") {
  // A constant stub field makes push-backward return x + c, so the ucm
  // residual collapses to (numerical) zero in every trial.
  PriorField stub;
  stub.num_classes = 0;
  stub.input_dim = 2;
  Vec c{0.8, -0.5};
  stub.eval = [c](const Vec&, double, int) { return c; };
  DistillConfig cfg = oracle_cfg();
  cfg.loss = DistillLoss::Ucm;
  cfg.schedule = SolverSchedule::uniform(SolverMethod::Euler, 4);

  Vec x{0.3, 1.9};
  double coh = gradient_coherence(stub, x, cfg, Rng(1), 6);
  REQUIRE(coh == 1.0);

  // vfds on the same stub scatters with the noise draw.
  DistillConfig vf = oracle_cfg();
  double coh_vfds = gradient_coherence(stub, x, vf, Rng(1), 8);
  REQUIRE(coh_vfds < 0.999);

  REQUIRE_THROWS_AS(gradient_coherence(stub, x, cfg, Rng(1), 1), std::invalid_argument);
  // Same base stream, same value.
  REQUIRE(gradient_coherence(stub, x, vf, Rng(4), 6) ==
          gradient_coherence(stub, x, vf, Rng(4), 6));
}

TEST_CASE("distill_run pulls a latent toward the oracle mean", "[distill]") {
  GaussianFlowOracle oracle{{2.0, -1.0}, {0.5, 0.5}};
  PriorField prior = oracle.prior_field();
  DistillConfig cfg = oracle_cfg();
  cfg.loss = DistillLoss::Ucm;
  cfg.total_steps = 400;
  cfg.asset_lr = 0.03;
  cfg.seed = 77;

  Asset latent;
  latent.kind = AssetKind::Latent;
  latent.dim = 2;
  latent.params = {0.0, 0.0};

  DistillResult res = distill_run(latent, prior, cfg);
  REQUIRE(std::abs(res.asset.params[0] - 2.0) < 0.3);
  REQUIRE(std::abs(res.asset.params[1] + 1.0) < 0.3);
  REQUIRE(res.metrics.rows.size() == 400);

  // Residuals shrink as the asset settles.
  double early = 0.0, late = 0.0;
  for (int i = 0; i < 30; ++i) {
    early += res.metrics.rows[std::size_t(i)].residual_norm / 30.0;
    late += res.metrics.rows[res.metrics.rows.size() - 1 - std::size_t(i)].residual_norm / 30.0;
  }
  REQUIRE(late < early);
}

TEST_CASE("distill runs replay bit-for-bit from the seed", "[distill]") {
  Network net = small_prior_net(53);
  PriorField prior = make_prior_field(net);
  DistillConfig cfg;
  cfg.loss = DistillLoss::Ucm;
  cfg.cfg_scale = 2.0;
  cfg.class_id = 1;
  cfg.total_steps = 25;
  cfg.seed = 12;

  Asset latent;
  latent.kind = AssetKind::Latent;
  latent.dim = 2;
  latent.params = {0.1, 0.1};

  DistillResult a = distill_run(latent, prior, cfg);
  DistillResult b = distill_run(latent, prior, cfg);
  REQUIRE(bitwise_equal(a.asset.params, b.asset.params));
  for (std::size_t i = 0; i < a.metrics.rows.size(); ++i) {
    REQUIRE(a.metrics.rows[i].residual_norm == b.metrics.rows[i].residual_norm);
    REQUIRE(a.metrics.rows[i].param_norm == b.metrics.rows[i].param_norm);
  }

  // Coherence probes fork their own stream: enabling them cannot change the
  // training trajectory.
  DistillConfig with_coh = cfg;
  with_coh.coherence_every = 5;
  with_coh.coherence_trials = 4;
  DistillResult c = distill_run(latent, prior, with_coh);
  REQUIRE(bitwise_equal(a.asset.params, c.asset.params));
  REQUIRE(c.metrics.rows[4].coherence.has_value());
  REQUIRE_FALSE(c.metrics.rows[3].coherence.has_value());
}

TEST_CASE("warm-up steps run the fit-style loss before switching", "[distill]") {
  Network net = small_prior_net(54);
  PriorField prior = make_prior_field(net);
  DistillConfig cfg;
  cfg.loss = DistillLoss::Ucm;
  cfg.cfg_scale = 2.0;
  cfg.warmup_steps = 3;
  cfg.total_steps = 6;
  Asset latent;
  latent.kind = AssetKind::Latent;
  latent.dim = 2;
  latent.params = {0.0, 0.0};
  DistillResult res = distill_run(latent, prior, cfg);
  REQUIRE(res.metrics.rows[0].loss_tag == "vfds");
  REQUIRE(res.metrics.rows[2].loss_tag == "vfds");
  REQUIRE(res.metrics.rows[3].loss_tag == "ucm");
  REQUIRE(res.metrics.rows[5].loss_tag == "ucm");
}

TEST_CASE("distill_run rejects inconsistent setups and aborts on blowups", "[distill]") {
  Network net = small_prior_net(55);
  PriorField prior = make_prior_field(net);
  Asset latent;
  latent.kind = AssetKind::Latent;
  latent.dim = 2;
  latent.params = {0.0, 0.0};

  DistillConfig bad_class;
  bad_class.class_id = 9;
  bad_class.total_steps = 1;
  REQUIRE_THROWS_AS(distill_run(latent, prior, bad_class), config_error);

  Asset wrong_dim = latent;
  wrong_dim.dim = 3;
  wrong_dim.params = {0.0, 0.0, 0.0};
  DistillConfig ok;
  ok.total_steps = 1;
  REQUIRE_THROWS_AS(distill_run(wrong_dim, prior, ok), config_error);

  DistillConfig jac_on_ucm;
  jac_on_ucm.loss = DistillLoss::Ucm;
  jac_on_ucm.include_jacobian = true;
  REQUIRE_THROWS_AS(jac_on_ucm.validate(), config_error);

  PriorField nan_field;
  nan_field.num_classes = 0;
  nan_field.input_dim = 2;
  nan_field.eval = [](const Vec& x, double, int) {
    return Vec(x.size(), std::numeric_limits<double>::quiet_NaN());
  };
  DistillConfig run_cfg = oracle_cfg();
  run_cfg.total_steps = 3;
  try {
    distill_run(latent, nan_field, run_cfg);
    FAIL("expected numeric_abort");
  } catch (const numeric_abort& e) {
    REQUIRE(e.step >= 1);
  }

  // Zero steps is a no-op that still reports a summary.
  DistillConfig zero = oracle_cfg();
  zero.total_steps = 0;
  GaussianFlowOracle oracle{{0.0, 0.0}, {1.0, 1.0}};
  DistillResult res = distill_run(latent, oracle.prior_field(), zero);
  REQUIRE(res.asset.params == latent.params);
  REQUIRE(res.metrics.rows.empty());
  REQUIRE(res.metrics.summary.size() == 2);
}

TEST_CASE("metrics csv round-trips losslessly", "[distill]") {
  RunMetrics m;
  MetricsRow r1{1, "vfds", 0.123456789012345678, std::nullopt, 1, 3.0000000000000004, 1.25};
  MetricsRow r2{2, "ucm", 1e-17, 0.9999999999999999, 4, 0.1, 2.0};
  m.rows = {r1, r2};
  m.summary = {{"steps", 2.0}, {"final_residual_norm", 0.3333333333333333}};

  std::stringstream buf;
  write_metrics_csv(m, buf);
  RunMetrics back = read_metrics_csv(buf);
  REQUIRE(back.rows.size() == 2);
  REQUIRE(back.rows[0].residual_norm == r1.residual_norm);
  REQUIRE(back.rows[1].coherence.has_value());
  REQUIRE(*back.rows[1].coherence == *r2.coherence);
  REQUIRE_FALSE(back.rows[0].coherence.has_value());
  REQUIRE(back.rows[1].param_norm == r2.param_norm);

  std::stringstream buf2;
  write_metrics_csv(back, buf2);
  REQUIRE(buf.str() == buf2.str());

  std::stringstream bad("not,a,header\n");
  REQUIRE_THROWS_AS(read_metrics_csv(bad), io_error);
}

TEST_CASE("config validation pins the documented constraints", "[distill]") {
  DistillConfig cfg;
  cfg.t_min = 0.5;
  cfg.t_max = 0.4;
  REQUIRE_THROWS_AS(cfg.validate(), config_error);
  cfg = DistillConfig{};
  cfg.asset_lr = 0.0;
  REQUIRE_THROWS_AS(cfg.validate(), config_error);
  cfg = DistillConfig{};
  cfg.loss = DistillLoss::VfIsm;
  cfg.vf_ism.delta = 0.3;
  cfg.vf_ism.steps = 4;  // anchor at 1.2 is past t_max
  REQUIRE_THROWS_AS(cfg.validate(), config_error);
  cfg = DistillConfig{};
  cfg.coherence_every = 3;
  cfg.coherence_trials = 1;
  REQUIRE_THROWS_AS(cfg.validate(), config_error);
  REQUIRE(default_cfg_scale(DistillLoss::Vfds) == 100.0);
  REQUIRE(default_cfg_scale(DistillLoss::Ucm) == 40.0);
  REQUIRE(default_cfg_scale(DistillLoss::VfIsm) == 40.0);
  REQUIRE(parse_distill_loss("vf-ism") == DistillLoss::VfIsm);
  REQUIRE_THROWS_AS(parse_distill_loss("sds"), config_error);
}
