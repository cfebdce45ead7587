#pragma once
// Command-line surface: train-prior, distill, invert, sweep, selfcheck.
// Commands are deterministic given (config, seed); every failure maps to a
// stable exit code: 0 success, 2 config or usage error, 3 missing or unusable
// artifact, 4 numeric abort. FLOWLAB_THREADS caps sweep parallelism.

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "flowlab/config.hpp"
#include "flowlab/gaussian_oracle.hpp"

namespace flowlab::cli {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitMissingArtifact = 3;
constexpr int kExitNumericAbort = 4;

inline int thread_cap() {
  const char* env = std::getenv("FLOWLAB_THREADS");
  if (!env || !*env) return 1;
  std::string s(env);
  long long v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size() || v < 1)
    throw config_error("FLOWLAB_THREADS must be a positive integer, got \"" + s + "\"");
  return (int)v;
}

// ---------------------------------------------------------------------------
// Flag parsing: every flag is --name value, except boolean switches.

struct Args {
  std::map<std::string, std::string> values;

  bool has(const std::string& flag) const { return values.count(flag) > 0; }
  const std::string& get(const std::string& flag) const { return values.at(flag); }
  std::string get_or(const std::string& flag, const std::string& fallback) const {
    auto it = values.find(flag);
    return it == values.end() ? fallback : it->second;
  }
};

inline Args parse_args(const std::vector<std::string>& tokens, std::size_t start,
                       const std::set<std::string>& valued, const std::set<std::string>& switches,
                       const std::set<std::string>& required) {
  Args out;
  for (std::size_t i = start; i < tokens.size(); ++i) {
    const std::string& tok = tokens[i];
    if (switches.count(tok)) {
      out.values[tok] = "true";
      continue;
    }
    if (!valued.count(tok))
      throw config_error("unknown flag \"" + tok + "\"");
    if (out.values.count(tok)) throw config_error("duplicate flag " + tok);
    if (i + 1 >= tokens.size()) throw config_error(tok + " expects a value");
    out.values[tok] = tokens[++i];
  }
  for (const auto& flag : required)
    if (!out.has(flag)) throw config_error("missing required flag " + flag);
  return out;
}

inline ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw missing_artifact_error("config file not found: " + path);
  return parse_config(is);
}

// Priors are usually RFPR checkpoints; the debug forms back the inversion
// examples with fields whose behavior is known in closed form.
//   debug:zero:D    D-dimensional everywhere-zero field
//   debug:oracle:D  velocity field of a standard normal in D dimensions
inline PriorField load_prior_field(const std::string& path) {
  if (path.rfind("debug:", 0) == 0) {
    std::string rest = path.substr(6);
    std::size_t colon = rest.find(':');
    if (colon == std::string::npos)
      throw config_error("debug prior must look like debug:zero:D or debug:oracle:D");
    std::string kind = rest.substr(0, colon);
    int dim = 0;
    std::string dim_str = rest.substr(colon + 1);
    auto [p, ec] = std::from_chars(dim_str.data(), dim_str.data() + dim_str.size(), dim);
    if (ec != std::errc{} || p != dim_str.data() + dim_str.size() || dim <= 0)
      throw config_error("debug prior dimension must be a positive integer");
    if (kind == "zero") {
      PriorField f;
      f.input_dim = dim;
      f.num_classes = 0;
      f.eval = [](const Vec& x, double, int) { return Vec(x.size(), 0.0); };
      f.vjp_x = [](const Vec& x, double, int, const Vec&) { return Vec(x.size(), 0.0); };
      return f;
    }
    if (kind == "oracle") {
      GaussianFlowOracle oracle{Vec(std::size_t(dim), 0.0), Vec(std::size_t(dim), 1.0)};
      return oracle.prior_field();
    }
    throw config_error("unknown debug prior \"" + kind + "\"");
  }
  return make_prior_field(load_checkpoint(path));
}

inline void ensure_parent_dir(const std::string& path) {
  std::filesystem::path parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
}

inline Vec read_vector_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw missing_artifact_error("vector file not found: " + path);
  Vec out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::string t = detail::trim(line);
    if (t.empty()) continue;
    try {
      out.push_back(parse_double(t));
    } catch (const std::exception&) {
      throw io_error(path + ": line " + std::to_string(line_no) + " is not a number");
    }
  }
  if (out.empty()) throw io_error(path + ": empty vector file");
  return out;
}

inline void write_vector_file(const Vec& v, const std::string& path) {
  ensure_parent_dir(path);
  std::ofstream os(path, std::ios::binary);
  for (double x : v) os << format_double(x) << "\n";
  if (!os) throw io_error("failed to write " + path);
}

// ---------------------------------------------------------------------------
// train-prior

inline int cmd_train_prior(const Args& args) {
  ExperimentConfig cfg = load_config_file(args.get("--config"));
  const std::string out_path = args.get("--out");

  Dataset data = generate_dataset(cfg.dataset);
  Network net = init_network(cfg.network_spec(), cfg.network_seed);
  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.prior_lr;
  AdamState opt = make_adam(net, adam_cfg);
  Rng rng(cfg.prior_seed);

  std::ostringstream csv;
  csv << "step,loss\n";
  std::vector<PriorBatchItem> batch((std::size_t)cfg.prior_batch);
  for (long long step = 1; step <= cfg.prior_steps; ++step) {
    for (auto& item : batch) {
      std::size_t idx = (std::size_t)rng.below((std::uint64_t)data.points.size());
      item.x0 = data.points[idx];
      item.class_id = data.labels[idx];
    }
    double loss;
    try {
      loss = prior_training_step(net, opt, batch, rng);
    } catch (const numeric_abort& e) {
      throw numeric_abort(e.what(), step);
    }
    csv << step << ',' << format_double(loss) << "\n";
  }

  ensure_parent_dir(out_path);
  save_checkpoint(net, out_path);
  std::ofstream os(out_path + ".loss.csv", std::ios::binary);
  os << csv.str();
  if (!os) throw io_error("failed to write " + out_path + ".loss.csv");
  std::cout << "wrote " << out_path << " (" << cfg.prior_steps << " steps)\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// distill

struct DistillPipelineResult {
  Asset initial;
  DistillResult run;
  Vec final_render;
};

// Shared by cmd_distill and sweeps: initialize the asset from the dataset
// statistics, run the distillation loop, and append dataset-level distances
// to the summary whenever the render lives in the dataset's space.
inline DistillPipelineResult run_distill_pipeline(const ExperimentConfig& cfg,
                                                  const PriorField& prior, const Dataset& data) {
  AssetInitMeta meta = cfg.asset_meta(data);
  Asset asset = init_asset(cfg.asset_kind, cfg.asset_init, cfg.asset_seed, meta);
  DistillConfig dc = cfg.distill_config();

  DistillPipelineResult out;
  out.initial = asset;
  out.run = distill_run(asset, prior, dc, cfg.view);
  out.final_render = render(out.run.asset);

  if ((int)out.final_render.size() == data.dim) {
    double best = std::numeric_limits<double>::infinity();
    for (int c = 1; c <= data.num_classes; ++c)
      best = std::min(best, l2_dist(out.final_render, data.class_mean(c)));
    out.run.metrics.summary.emplace_back("mode_distance", best);
    out.run.metrics.summary.emplace_back("mean_distance",
                                         l2_dist(out.final_render, data.mean()));
    std::size_t n = std::min<std::size_t>(data.points.size(), 512);
    std::vector<Vec> sample(data.points.begin(), data.points.begin() + (std::ptrdiff_t)n);
    out.run.metrics.summary.emplace_back("energy_distance",
                                         energy_distance({out.final_render}, sample));
  }
  return out;
}

inline ExperimentConfig apply_distill_overrides(ExperimentConfig cfg, const Args& args) {
  if (args.has("--loss")) cfg.loss = parse_distill_loss(args.get("--loss"));
  if (args.has("--solver")) cfg.solver = parse_solver_method(args.get("--solver"));
  if (args.has("--nfe")) cfg.nfe = (int)detail::parse_config_int(args.get("--nfe"));
  if (args.has("--cfg-scale")) {
    cfg.cfg_scale = detail::parse_config_double(args.get("--cfg-scale"));
    cfg.cfg_scale_auto = false;
  }
  if (args.has("--steps")) cfg.distill_steps = detail::parse_config_int(args.get("--steps"));
  if (args.has("--warmup")) {
    cfg.warmup = detail::parse_config_int(args.get("--warmup"));
    cfg.warmup_auto = false;
  }
  if (args.has("--seed")) cfg.distill_seed = detail::parse_config_u64(args.get("--seed"));
  if (args.has("--include-jacobian")) cfg.include_jacobian = true;
  cfg.validate();
  return cfg;
}

inline int cmd_distill(const Args& args) {
  ExperimentConfig cfg = apply_distill_overrides(load_config_file(args.get("--config")), args);
  PriorField prior = load_prior_field(args.get("--prior"));
  const std::string out_dir = args.get("--out");

  Dataset data = generate_dataset(cfg.dataset);
  DistillPipelineResult res = run_distill_pipeline(cfg, prior, data);

  std::filesystem::create_directories(out_dir);
  auto in_dir = [&](const std::string& name) {
    return (std::filesystem::path(out_dir) / name).string();
  };
  save_asset(res.run.asset, in_dir("asset.rfas"));
  {
    std::ofstream os(in_dir("metrics.csv"), std::ios::binary);
    write_metrics_csv(res.run.metrics, os);
    if (!os) throw io_error("failed to write metrics.csv");
  }
  {
    std::ofstream os(in_dir("summary.csv"), std::ios::binary);
    write_summary_csv(res.run.metrics, os);
    if (!os) throw io_error("failed to write summary.csv");
  }
  int side = cfg.dataset.image_size;
  if (cfg.dataset.name == DatasetName::Shapes16 && (int)res.final_render.size() == side * side) {
    write_pgm(render(res.initial), side, in_dir("render_init.pgm"));
    write_pgm(res.final_render, side, in_dir("render_final.pgm"));
  }
  std::cout << "wrote " << out_dir << " (" << res.run.metrics.rows.size() << " steps, nfe "
            << res.run.metrics.total_nfe() << ")\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// invert

inline int cmd_invert(const Args& args) {
  PriorField prior = load_prior_field(args.get("--prior"));
  Vec x = read_vector_file(args.get("--in"));
  int nfe = (int)detail::parse_config_int(args.get_or("--nfe", "64"));
  SolverMethod method = parse_solver_method(args.get_or("--solver", "euler"));
  if ((int)x.size() != prior.input_dim)
    throw config_error("input has dim " + std::to_string(x.size()) + " but the prior expects " +
                       std::to_string(prior.input_dim));

  SolverSchedule sched = SolverSchedule::uniform(method, nfe);
  FieldFn field = bind_field(prior, GuidanceConfig{1.0, 0});
  Vec noise = push_backward(field, x, sched);
  Vec back = generate(field, noise, sched);
  write_vector_file(noise, args.get("--out"));

  double abs_err = l2_dist(back, x);
  double rel_err = abs_err / std::max(l2_norm(x), 1e-300);
  std::cout << "dim," << x.size() << "\n";
  std::cout << "nfe," << nfe << "\n";
  std::cout << "solver," << solver_name(method) << "\n";
  std::cout << "round_trip_abs_error," << format_double(abs_err) << "\n";
  std::cout << "round_trip_rel_error," << format_double(rel_err) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// sweep

enum class SweepKind { Nfe, Solver, Cfg, Loss };

inline SweepKind parse_sweep_kind(const std::string& s) {
  if (s == "nfe") return SweepKind::Nfe;
  if (s == "solver") return SweepKind::Solver;
  if (s == "cfg") return SweepKind::Cfg;
  if (s == "loss") return SweepKind::Loss;
  throw config_error("unknown sweep kind \"" + s + "\" (expected nfe, solver, cfg, or loss)");
}

inline ExperimentConfig apply_sweep_value(ExperimentConfig cfg, SweepKind kind,
                                          const std::string& token) {
  switch (kind) {
    case SweepKind::Nfe:
      cfg.nfe = (int)detail::parse_config_int(token);
      break;
    case SweepKind::Solver:
      cfg.solver = parse_solver_method(token);
      break;
    case SweepKind::Cfg:
      cfg.cfg_scale = detail::parse_config_double(token);
      cfg.cfg_scale_auto = false;
      break;
    case SweepKind::Loss:
      cfg.loss = parse_distill_loss(token);
      break;
  }
  return cfg;
}

inline std::vector<std::pair<std::string, double>> run_sweep_value(const ExperimentConfig& base,
                                                                   SweepKind kind,
                                                                   const std::string& token,
                                                                   const PriorField& prior,
                                                                   const Dataset& data) {
  ExperimentConfig cfg = apply_sweep_value(base, kind, token);
  if (cfg.sweep_target == "invert") {
    if (kind == SweepKind::Cfg || kind == SweepKind::Loss)
      throw config_error("sweep kind only applies to distill runs when sweep.target = invert");
    Rng rng(cfg.distill_seed);
    Vec probe((std::size_t)prior.input_dim);
    for (auto& v : probe) v = rng.normal();
    SolverSchedule sched = SolverSchedule::uniform(cfg.solver, cfg.nfe);
    FieldFn field = bind_field(prior, GuidanceConfig{1.0, 0});
    Vec noise = push_backward(field, probe, sched);
    Vec back = generate(field, noise, sched);
    double abs_err = l2_dist(back, probe);
    double rel_err = abs_err / std::max(l2_norm(probe), 1e-300);
    return {{"round_trip_abs_error", abs_err}, {"round_trip_rel_error", rel_err}};
  }
  cfg.validate();
  return run_distill_pipeline(cfg, prior, data).run.metrics.summary;
}

inline int cmd_sweep(const Args& args) {
  ExperimentConfig base = load_config_file(args.get("--config"));
  SweepKind kind = parse_sweep_kind(args.get("--kind"));
  std::vector<std::string> tokens = detail::split_list(args.get("--values"));
  if (tokens.size() == 1 && tokens[0].empty()) throw config_error("sweep value list is empty");
  for (const auto& t : tokens)
    if (t.empty()) throw config_error("sweep value list has an empty entry");
  // Parse every value up front so a typo fails before any run starts.
  for (const auto& t : tokens) apply_sweep_value(base, kind, t);

  Dataset data = generate_dataset(base.dataset);
  PriorField prior;
  if (args.has("--prior")) {
    prior = load_prior_field(args.get("--prior"));
  } else {
    // Self-contained sweeps train the prior from the config first.
    Network net = init_network(base.network_spec(), base.network_seed);
    AdamConfig adam_cfg;
    adam_cfg.lr = base.prior_lr;
    AdamState opt = make_adam(net, adam_cfg);
    Rng rng(base.prior_seed);
    std::vector<PriorBatchItem> batch((std::size_t)base.prior_batch);
    for (long long step = 1; step <= base.prior_steps; ++step) {
      for (auto& item : batch) {
        std::size_t idx = (std::size_t)rng.below((std::uint64_t)data.points.size());
        item.x0 = data.points[idx];
        item.class_id = data.labels[idx];
      }
      prior_training_step(net, opt, batch, rng);
    }
    prior = make_prior_field(net);
  }

  std::vector<std::vector<std::pair<std::string, double>>> results(tokens.size());
  int threads = std::min<int>(thread_cap(), (int)tokens.size());
  if (threads <= 1) {
    for (std::size_t i = 0; i < tokens.size(); ++i)
      results[i] = run_sweep_value(base, kind, tokens[i], prior, data);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mu;
    auto worker = [&] {
      for (;;) {
        std::size_t i = next.fetch_add(1);
        if (i >= tokens.size()) return;
        try {
          results[i] = run_sweep_value(base, kind, tokens[i], prior, data);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!first_error) first_error = std::current_exception();
        }
      }
    };
    std::vector<std::thread> pool;
    for (int w = 0; w < threads; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  const std::string out_path = args.get("--out");
  ensure_parent_dir(out_path);
  std::ofstream os(out_path, std::ios::binary);
  os << "sweep_kind,value,metric,metric_value\n";
  for (std::size_t i = 0; i < tokens.size(); ++i)
    for (const auto& [metric, value] : results[i])
      os << args.get("--kind") << ',' << tokens[i] << ',' << metric << ','
         << format_double(value) << "\n";
  if (!os) throw io_error("failed to write " + out_path);
  std::cout << "wrote " << out_path << " (" << tokens.size() << " values)\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// selfcheck

struct CheckSuite {
  std::string name;
  int passed = 0;
  int total = 0;
  std::vector<std::string> failures;

  void check(const std::string& label, bool ok) {
    ++total;
    if (ok)
      ++passed;
    else
      failures.push_back(label);
  }
};

namespace detail_selfcheck {

inline bool perturbed(const std::string& suite) {
  const char* env = std::getenv("FLOWLAB_SELFCHECK_PERTURB");
  return env && suite == env;
}

inline CheckSuite finite_difference_suite() {
  CheckSuite suite{"finite_difference"};
  double nudge = perturbed(suite.name) ? 1e-3 : 0.0;

  NetworkSpec spec;
  spec.input_dim = 2;
  spec.hidden_dims = {8};
  spec.time_embed_dim = 3;
  spec.num_classes = 3;
  spec.cond_embed_dim = 3;
  Network net = init_network(spec, 11);
  Rng rng(12);
  Vec x{rng.normal(), rng.normal()};
  Vec u{rng.normal(), rng.normal()};
  double t = 0.37;
  int cls = 2;

  auto eval = [&] {
    Vec v = forward(net, x, t, cls);
    return dot(v, u);
  };
  auto fd = [&](double& slot) {
    double h = 1e-5, orig = slot;
    slot = orig + h;
    double up = eval();
    slot = orig - h;
    double dn = eval();
    slot = orig;
    return (up - dn) / (2.0 * h);
  };
  auto close = [&](double got, double want) {
    return std::abs(got + nudge - want) / std::max(std::abs(want), 1e-6) < 1e-4;
  };

  ForwardTrace trace;
  forward_trace(net, x, t, cls, trace);
  Network grads = backward_params(net, trace, u);
  suite.check("layer 0 weight grad", close(grads.layers[0].w.data[3], fd(net.layers[0].w.data[3])));
  suite.check("layer 0 bias grad", close(grads.layers[0].b[1], fd(net.layers[0].b[1])));
  suite.check("layer 1 weight grad", close(grads.layers[1].w.data[5], fd(net.layers[1].w.data[5])));
  suite.check("embedding grad",
              close(grads.embed.data[(std::size_t)cls * 3 + 1],
                    fd(net.embed.data[(std::size_t)cls * 3 + 1])));
  Vec gin = backward_input(net, trace, u);
  suite.check("input grad x0", close(gin[0], fd(x[0])));
  suite.check("input grad x1", close(gin[1], fd(x[1])));

  Asset asset;
  asset.kind = AssetKind::Splat;
  asset.dim = 64;
  asset.canvas_size = 8;
  asset.splat_count = 1;
  asset.params = {0.45, 0.6, std::log(0.2), std::log(0.12), 0.3, 0.7, -0.1};
  ViewPose view{0.2, 0.03, -0.02};
  Vec uc((std::size_t)(8 * 8));
  Rng prng(13);
  for (auto& v : uc) v = prng.normal();
  auto eval_render = [&] { return dot(render(asset, view), uc); };
  Vec ga = backprop_view(asset, view, uc);
  const char* labels[7] = {"splat center u", "splat center v", "splat log su", "splat log sv",
                           "splat shear",    "splat amplitude", "background"};
  for (std::size_t k = 0; k < asset.params.size(); ++k) {
    double h = 1e-6, orig = asset.params[k];
    asset.params[k] = orig + h;
    double up = eval_render();
    asset.params[k] = orig - h;
    double dn = eval_render();
    asset.params[k] = orig;
    double want = (up - dn) / (2.0 * h);
    suite.check(labels[k], std::abs(ga[k] + nudge - want) / std::max(std::abs(want), 1e-6) < 1e-3);
  }
  return suite;
}

inline CheckSuite solver_exactness_suite() {
  CheckSuite suite{"solver_exactness"};
  double factor = perturbed(suite.name) ? 1.0 + 1e-6 : 1.0;

  Vec x0{0.7, -1.3};
  Vec eps{0.2, 0.9};
  Vec at0 = interpolate(x0, eps, 0.0);
  Vec at1 = interpolate(x0, eps, 1.0);
  suite.check("interpolation hits the data endpoint",
              factor * at0[0] == x0[0] && factor * at0[1] == x0[1]);
  suite.check("interpolation hits the noise endpoint",
              factor * at1[0] == eps[0] && factor * at1[1] == eps[1]);

  FieldFn straight = [&](const Vec& x, double t) {
    Vec v(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) v[i] = eps[i] - x0[i];
    (void)t;
    return v;
  };
  Vec one_step = solver_step(SolverMethod::Euler, straight, x0, 0.0, 0.3);
  Vec interp = interpolate(x0, eps, 0.3);
  suite.check("one euler step equals the interpolation",
              factor * one_step[0] == interp[0] && factor * one_step[1] == interp[1]);

  FieldFn growth = [](const Vec& x, double) { return x; };
  Vec unit{1.0};
  double euler = solver_step(SolverMethod::Euler, growth, unit, 0.0, 1.0)[0] * factor;
  double midpoint = solver_step(SolverMethod::Midpoint, growth, unit, 0.0, 1.0)[0] * factor;
  double rk4 = solver_step(SolverMethod::Rk4, growth, unit, 0.0, 1.0)[0] * factor;
  suite.check("euler growth factor", std::abs(euler - 2.0) < 1e-12);
  suite.check("midpoint growth factor", std::abs(midpoint - 2.5) < 1e-12);
  suite.check("rk4 growth factor", std::abs(rk4 - 65.0 / 24.0) < 1e-12);
  return suite;
}

inline CheckSuite roundtrip_monotone_suite() {
  CheckSuite suite{"roundtrip_monotone"};
  double inflate = perturbed(suite.name) ? 0.1 : 0.0;

  GaussianFlowOracle oracle{{0.0, 0.0}, {1.0, 1.0}};
  FieldFn field = oracle.field();
  Rng rng(123);
  Vec probe{rng.normal(), rng.normal()};
  std::vector<int> nfes{4, 16, 64};
  std::vector<double> errs;
  for (int n : nfes) {
    SolverSchedule sched = SolverSchedule::uniform(SolverMethod::Euler, n);
    Vec noise = push_backward(field, probe, sched);
    Vec back = generate(field, noise, sched);
    errs.push_back(l2_dist(back, probe) / l2_norm(probe));
  }
  errs.back() += inflate;
  suite.check("error shrinks from nfe 4 to 16", errs[0] > errs[1]);
  suite.check("error shrinks from nfe 16 to 64", errs[1] > errs[2]);
  suite.check("nfe 64 round-trip is tight", errs[2] < 0.05);
  return suite;
}

inline CheckSuite forced_coupling_suite() {
  CheckSuite suite{"forced_coupling"};
  bool sabotage = perturbed(suite.name);

  NetworkSpec spec;
  spec.input_dim = 2;
  spec.hidden_dims = {10};
  spec.time_embed_dim = 3;
  spec.num_classes = 3;
  spec.cond_embed_dim = 4;
  PriorField prior = make_prior_field(init_network(spec, 51));

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
  if (sabotage) e_star[0] += 1e-9;
  DistillConfig as_vfds = cfg;
  as_vfds.loss = DistillLoss::Vfds;
  DistillGradient via_vfds = vfds_gradient_at(prior, x, e_star, t, as_vfds);
  suite.check("ucm equals vfds at the inverted noise",
              std::memcmp(via_ucm.grad_x.data(), via_vfds.grad_x.data(),
                          via_ucm.grad_x.size() * sizeof(double)) == 0);

  PriorField stub;
  stub.num_classes = 0;
  stub.input_dim = 2;
  Vec c{0.8, -0.5};
  stub.eval = [c](const Vec&, double, int) { return c; };
  DistillConfig coh = cfg;
  coh.cfg_scale = 0.0;
  coh.class_id = 0;
  double value = gradient_coherence(stub, x, coh, Rng(1), 6);
  if (sabotage) value -= 1e-6;
  suite.check("self-consistent coupling has coherence one", value == 1.0);
  return suite;
}

}  // namespace detail_selfcheck

inline int cmd_selfcheck() {
  std::vector<CheckSuite> suites;
  suites.push_back(detail_selfcheck::finite_difference_suite());
  suites.push_back(detail_selfcheck::solver_exactness_suite());
  suites.push_back(detail_selfcheck::roundtrip_monotone_suite());
  suites.push_back(detail_selfcheck::forced_coupling_suite());

  int checks = 0;
  std::vector<std::string> failed;
  for (const auto& s : suites) {
    std::cout << s.name << ": " << s.passed << "/" << s.total << "\n";
    for (const auto& f : s.failures) std::cout << "  FAIL " << f << "\n";
    checks += s.total;
    if (s.passed != s.total) failed.push_back(s.name);
  }
  if (failed.empty()) {
    std::cout << "selfcheck PASS (" << suites.size() << " suites, " << checks << " checks)\n";
    return kExitOk;
  }
  std::cout << "selfcheck FAIL:";
  for (const auto& name : failed) std::cout << ' ' << name;
  std::cout << "\n";
  return 1;
}

// ---------------------------------------------------------------------------

inline void print_usage(std::ostream& os) {
  os << "usage: flowlab <command> [flags]\n"
        "\n"
        "commands:\n"
        "  train-prior --config C --out P        train the velocity prior, write RFPR + loss CSV\n"
        "  distill     --config C --prior P --out DIR [--loss vfds|ucm|vf-ism] [--nfe N]\n"
        "              [--solver euler|midpoint|rk4] [--cfg-scale S] [--steps K] [--warmup W]\n"
        "              [--seed N] [--include-jacobian]\n"
        "  invert      --prior P --in F --out F2 [--nfe N] [--solver M]\n"
        "  sweep       --kind nfe|solver|cfg|loss --values V1,V2,... --config C --out CSV\n"
        "              [--prior P]\n"
        "  selfcheck\n"
        "\n"
        "Priors are RFPR checkpoints; debug:zero:D and debug:oracle:D give closed-form fields.\n"
        "FLOWLAB_THREADS caps sweep parallelism.\n"
        "Exit codes: 0 ok, 2 config error, 3 missing artifact, 4 numeric abort.\n";
}

inline int run(int argc, char** argv) {
  std::vector<std::string> tokens(argv + 1, argv + argc);
  if (tokens.empty()) {
    print_usage(std::cerr);
    return kExitConfig;
  }
  const std::string& cmd = tokens[0];
  if (cmd == "--help" || cmd == "-h" || cmd == "help") {
    print_usage(std::cout);
    return kExitOk;
  }
  try {
    if (cmd == "train-prior")
      return cmd_train_prior(
          parse_args(tokens, 1, {"--config", "--out"}, {}, {"--config", "--out"}));
    if (cmd == "distill")
      return cmd_distill(parse_args(tokens, 1,
                                    {"--config", "--prior", "--out", "--loss", "--nfe", "--solver",
                                     "--cfg-scale", "--steps", "--warmup", "--seed"},
                                    {"--include-jacobian"}, {"--config", "--prior", "--out"}));
    if (cmd == "invert")
      return cmd_invert(parse_args(tokens, 1, {"--prior", "--in", "--out", "--nfe", "--solver"},
                                   {}, {"--prior", "--in", "--out"}));
    if (cmd == "sweep")
      return cmd_sweep(parse_args(tokens, 1,
                                  {"--kind", "--values", "--config", "--out", "--prior"}, {},
                                  {"--kind", "--values", "--config", "--out"}));
    if (cmd == "selfcheck") {
      parse_args(tokens, 1, {}, {}, {});
      return cmd_selfcheck();
    }
    throw config_error("unknown command \"" + cmd + "\"");
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const missing_artifact_error& e) {
    std::cerr << "missing artifact: " << e.what() << "\n";
    return kExitMissingArtifact;
  } catch (const io_error& e) {
    std::cerr << "artifact error: " << e.what() << "\n";
    return kExitMissingArtifact;
  } catch (const numeric_abort& e) {
    std::cerr << "numeric abort: " << e.what() << "\n";
    return kExitNumericAbort;
  }
}

}  // namespace flowlab::cli
