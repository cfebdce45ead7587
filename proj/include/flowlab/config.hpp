#pragma once
// Line-oriented experiment configuration: `section.key = value` text that
// parses into one struct covering the dataset, the prior network and its
// training loop, the distillation run, the asset, and view jitter. Parsing is
// strict: unknown keys, duplicate keys, and malformed values are errors with
// line numbers. dump_config emits every key in a canonical order so a config
// round-trips losslessly through text.

#include <charconv>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "flowlab/assets.hpp"
#include "flowlab/datasets.hpp"
#include "flowlab/distill.hpp"
#include "flowlab/errors.hpp"
#include "flowlab/metrics.hpp"
#include "flowlab/nn.hpp"

namespace flowlab {

// Label count per dataset (excluding the reserved null label 0).
inline int dataset_class_count(DatasetName name) {
  return name == DatasetName::Shapes16 ? 4 : 2;
}

inline int dataset_point_dim(const DatasetSpec& spec) {
  return spec.name == DatasetName::Shapes16 ? spec.image_size * spec.image_size : 2;
}

struct ExperimentConfig {
  DatasetSpec dataset;

  // network.*
  std::vector<int> hidden{64, 64};
  int time_embed = 5;
  int cond_embed = 8;
  Activation activation = Activation::Silu;
  std::uint64_t network_seed = 0;

  // prior.*
  long long prior_steps = 2000;
  int prior_batch = 128;
  double prior_lr = 1e-3;
  std::uint64_t prior_seed = 0;

  // distill.*  ("auto" keys resolve against the chosen loss / init mode)
  DistillLoss loss = DistillLoss::Vfds;
  bool cfg_scale_auto = true;
  double cfg_scale = 0.0;
  int class_id = 1;
  SolverMethod solver = SolverMethod::Euler;
  int nfe = 3;
  double t_min = 1e-3;
  double t_max = 1.0 - 1e-3;
  long long distill_steps = 400;
  bool warmup_auto = true;
  long long warmup = 0;
  double distill_lr = 0.01;
  bool include_jacobian = false;
  double inversion_cfg_scale = 1.0;
  bool explicit_ds_scale = false;
  double vf_ism_delta = 0.1;
  int vf_ism_steps = 3;
  std::uint64_t distill_seed = 0;
  long long coherence_every = 0;
  int coherence_trials = 8;

  // asset.*
  AssetKind asset_kind = AssetKind::Latent;
  InitMode asset_init = InitMode::InDistribution;
  std::uint64_t asset_seed = 0;
  int splats = 24;

  // view.*
  ViewRanges view;

  // run.* / sweep.*
  std::string out_dir = ".";
  std::string sweep_target = "distill";  // or "invert"

  double resolved_cfg_scale() const {
    return cfg_scale_auto ? default_cfg_scale(loss) : cfg_scale;
  }

  // Out-of-distribution starts default to a vfds warm-up of 15% of the run.
  long long resolved_warmup() const {
    if (!warmup_auto) return warmup;
    return asset_init == InitMode::OutOfDistribution ? (distill_steps * 15) / 100 : 0;
  }

  NetworkSpec network_spec() const {
    NetworkSpec s;
    s.input_dim = dataset_point_dim(dataset);
    s.hidden_dims = hidden;
    s.time_embed_dim = time_embed;
    s.num_classes = dataset_class_count(dataset.name) + 1;  // row 0 is the null label
    s.cond_embed_dim = cond_embed;
    s.activation = activation;
    return s;
  }

  DistillConfig distill_config() const {
    DistillConfig d;
    d.loss = loss;
    d.cfg_scale = resolved_cfg_scale();
    d.class_id = class_id;
    d.schedule = SolverSchedule::uniform(solver, nfe);
    d.t_min = t_min;
    d.t_max = t_max;
    d.total_steps = distill_steps;
    d.warmup_steps = resolved_warmup();
    d.asset_lr = distill_lr;
    d.include_jacobian = include_jacobian;
    d.inversion_cfg_scale = inversion_cfg_scale;
    d.explicit_ds_scale = explicit_ds_scale;
    d.vf_ism.delta = vf_ism_delta;
    d.vf_ism.steps = vf_ism_steps;
    d.seed = distill_seed;
    d.coherence_every = coherence_every;
    d.coherence_trials = coherence_trials;
    return d;
  }

  AssetInitMeta asset_meta(const Dataset& data) const {
    AssetInitMeta meta;
    meta.dim = data.dim;
    meta.data_mean = data.mean();
    meta.pixel_mean = data.scalar_mean();
    meta.pixel_std = data.scalar_std();
    meta.canvas_size = dataset.image_size;
    meta.splat_count = splats;
    return meta;
  }

  void validate() const {
    dataset.validate();
    network_spec().validate();
    if (prior_steps < 0) throw config_error("prior.steps must be non-negative");
    if (prior_batch <= 0) throw config_error("prior.batch must be positive");
    if (!(prior_lr > 0.0)) throw config_error("prior.lr must be positive");
    if (splats <= 0) throw config_error("asset.splats must be positive");
    if (asset_kind == AssetKind::Splat && dataset.name != DatasetName::Shapes16)
      throw config_error("asset.kind = splat requires an image dataset");
    if (!warmup_auto && warmup < 0) throw config_error("distill.warmup must be non-negative");
    if (sweep_target != "distill" && sweep_target != "invert")
      throw config_error("sweep.target must be distill or invert");
    distill_config().validate();
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

struct ConfigReader {
  std::map<std::string, std::string> values;
  std::map<std::string, int> lines;
  std::map<std::string, bool> consumed;

  int line_of(const std::string& key) const {
    auto it = lines.find(key);
    return it == lines.end() ? 0 : it->second;
  }

  bool has(const std::string& key) {
    auto it = values.find(key);
    if (it == values.end()) return false;
    consumed[key] = true;
    return true;
  }

  const std::string& raw(const std::string& key) { return values.at(key); }

  template <typename F>
  void set(const std::string& key, F&& apply) {
    if (!has(key)) return;
    try {
      apply(values.at(key));
    } catch (const config_error& e) {
      if (e.line > 0) throw;
      throw config_error(e.what(), line_of(key));
    } catch (const std::exception& e) {
      throw config_error(key + ": " + e.what(), line_of(key));
    }
  }

  void fail(const std::string& key, const std::string& msg) {
    throw config_error(key + ": " + msg, line_of(key));
  }
};

inline double parse_config_double(const std::string& s) { return parse_double(s); }

inline long long parse_config_int(const std::string& s) {
  long long v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size())
    throw std::invalid_argument("expected an integer, got \"" + s + "\"");
  return v;
}

inline std::uint64_t parse_config_u64(const std::string& s) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size())
    throw std::invalid_argument("expected a non-negative integer, got \"" + s + "\"");
  return v;
}

inline bool parse_config_bool(const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw std::invalid_argument("expected true or false, got \"" + s + "\"");
}

inline Vec parse_vec(const std::string& s) {
  Vec out;
  for (const auto& tok : split_list(s)) out.push_back(parse_config_double(tok));
  return out;
}

inline std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  for (const auto& tok : split_list(s)) out.push_back((int)parse_config_int(tok));
  return out;
}

}  // namespace detail

inline ExperimentConfig parse_config(std::istream& is) {
  detail::ConfigReader r;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::string t = detail::trim(line);
    if (t.empty()) continue;
    std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw config_error("expected `section.key = value`, got \"" + t + "\"", line_no);
    std::string key = detail::trim(t.substr(0, eq));
    std::string value = detail::trim(t.substr(eq + 1));
    if (key.empty() || key.find('.') == std::string::npos)
      throw config_error("expected a section.key name, got \"" + key + "\"", line_no);
    if (r.values.count(key)) throw config_error("duplicate key " + key, line_no);
    r.values[key] = value;
    r.lines[key] = line_no;
  }

  ExperimentConfig cfg;
  using detail::parse_config_bool;
  using detail::parse_config_double;
  using detail::parse_config_int;
  using detail::parse_config_u64;

  r.set("dataset.name", [&](const std::string& v) { cfg.dataset.name = parse_dataset_name(v); });
  r.set("dataset.size", [&](const std::string& v) { cfg.dataset.size = (int)parse_config_int(v); });
  r.set("dataset.seed", [&](const std::string& v) { cfg.dataset.seed = parse_config_u64(v); });
  r.set("dataset.center1", [&](const std::string& v) { cfg.dataset.center1 = detail::parse_vec(v); });
  r.set("dataset.center2", [&](const std::string& v) { cfg.dataset.center2 = detail::parse_vec(v); });
  r.set("dataset.sigma", [&](const std::string& v) { cfg.dataset.sigma = parse_config_double(v); });
  r.set("dataset.moons_noise",
        [&](const std::string& v) { cfg.dataset.moons_noise = parse_config_double(v); });
  r.set("dataset.image_size",
        [&](const std::string& v) { cfg.dataset.image_size = (int)parse_config_int(v); });

  r.set("network.hidden", [&](const std::string& v) { cfg.hidden = detail::parse_int_list(v); });
  r.set("network.time_embed",
        [&](const std::string& v) { cfg.time_embed = (int)parse_config_int(v); });
  r.set("network.cond_embed",
        [&](const std::string& v) { cfg.cond_embed = (int)parse_config_int(v); });
  r.set("network.activation", [&](const std::string& v) {
    if (v == "silu")
      cfg.activation = Activation::Silu;
    else if (v == "tanh")
      cfg.activation = Activation::Tanh;
    else
      r.fail("network.activation", "expected silu or tanh, got \"" + v + "\"");
  });
  r.set("network.seed", [&](const std::string& v) { cfg.network_seed = parse_config_u64(v); });

  r.set("prior.steps", [&](const std::string& v) { cfg.prior_steps = parse_config_int(v); });
  r.set("prior.batch", [&](const std::string& v) { cfg.prior_batch = (int)parse_config_int(v); });
  r.set("prior.lr", [&](const std::string& v) { cfg.prior_lr = parse_config_double(v); });
  r.set("prior.seed", [&](const std::string& v) { cfg.prior_seed = parse_config_u64(v); });

  r.set("distill.loss", [&](const std::string& v) { cfg.loss = parse_distill_loss(v); });
  r.set("distill.cfg_scale", [&](const std::string& v) {
    cfg.cfg_scale_auto = (v == "auto");
    if (!cfg.cfg_scale_auto) cfg.cfg_scale = parse_config_double(v);
  });
  r.set("distill.class_id", [&](const std::string& v) { cfg.class_id = (int)parse_config_int(v); });
  r.set("distill.solver", [&](const std::string& v) { cfg.solver = parse_solver_method(v); });
  r.set("distill.nfe", [&](const std::string& v) { cfg.nfe = (int)parse_config_int(v); });
  r.set("distill.t_min", [&](const std::string& v) { cfg.t_min = parse_config_double(v); });
  r.set("distill.t_max", [&](const std::string& v) { cfg.t_max = parse_config_double(v); });
  r.set("distill.steps", [&](const std::string& v) { cfg.distill_steps = parse_config_int(v); });
  r.set("distill.warmup", [&](const std::string& v) {
    cfg.warmup_auto = (v == "auto");
    if (!cfg.warmup_auto) cfg.warmup = parse_config_int(v);
  });
  r.set("distill.lr", [&](const std::string& v) { cfg.distill_lr = parse_config_double(v); });
  r.set("distill.include_jacobian",
        [&](const std::string& v) { cfg.include_jacobian = parse_config_bool(v); });
  r.set("distill.inversion_cfg_scale",
        [&](const std::string& v) { cfg.inversion_cfg_scale = parse_config_double(v); });
  r.set("distill.explicit_ds_scale",
        [&](const std::string& v) { cfg.explicit_ds_scale = parse_config_bool(v); });
  r.set("distill.vf_ism_delta",
        [&](const std::string& v) { cfg.vf_ism_delta = parse_config_double(v); });
  r.set("distill.vf_ism_steps",
        [&](const std::string& v) { cfg.vf_ism_steps = (int)parse_config_int(v); });
  r.set("distill.seed", [&](const std::string& v) { cfg.distill_seed = parse_config_u64(v); });
  r.set("distill.coherence_every",
        [&](const std::string& v) { cfg.coherence_every = parse_config_int(v); });
  r.set("distill.coherence_trials",
        [&](const std::string& v) { cfg.coherence_trials = (int)parse_config_int(v); });

  r.set("asset.kind", [&](const std::string& v) {
    if (v == "latent")
      cfg.asset_kind = AssetKind::Latent;
    else if (v == "splat")
      cfg.asset_kind = AssetKind::Splat;
    else
      r.fail("asset.kind", "expected latent or splat, got \"" + v + "\"");
  });
  r.set("asset.init", [&](const std::string& v) {
    if (v == "in")
      cfg.asset_init = InitMode::InDistribution;
    else if (v == "out")
      cfg.asset_init = InitMode::OutOfDistribution;
    else
      r.fail("asset.init", "expected in or out, got \"" + v + "\"");
  });
  r.set("asset.seed", [&](const std::string& v) { cfg.asset_seed = parse_config_u64(v); });
  r.set("asset.splats", [&](const std::string& v) { cfg.splats = (int)parse_config_int(v); });

  r.set("view.rot", [&](const std::string& v) { cfg.view.rot = parse_config_double(v); });
  r.set("view.trans", [&](const std::string& v) { cfg.view.trans = parse_config_double(v); });

  r.set("run.out_dir", [&](const std::string& v) { cfg.out_dir = v; });
  r.set("sweep.target", [&](const std::string& v) { cfg.sweep_target = v; });

  for (const auto& [key, _] : r.values)
    if (!r.consumed.count(key)) throw config_error("unknown key " + key, r.line_of(key));

  cfg.validate();
  return cfg;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  std::istringstream is(text);
  return parse_config(is);
}

inline void dump_config(const ExperimentConfig& cfg, std::ostream& os) {
  auto vec_str = [](const Vec& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) s += ',';
      s += format_double(v[i]);
    }
    return s;
  };
  auto ints_str = [](const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) s += ',';
      s += std::to_string(v[i]);
    }
    return s;
  };

  os << "dataset.name = " << dataset_name_str(cfg.dataset.name) << "\n";
  os << "dataset.size = " << cfg.dataset.size << "\n";
  os << "dataset.seed = " << cfg.dataset.seed << "\n";
  os << "dataset.center1 = " << vec_str(cfg.dataset.center1) << "\n";
  os << "dataset.center2 = " << vec_str(cfg.dataset.center2) << "\n";
  os << "dataset.sigma = " << format_double(cfg.dataset.sigma) << "\n";
  os << "dataset.moons_noise = " << format_double(cfg.dataset.moons_noise) << "\n";
  os << "dataset.image_size = " << cfg.dataset.image_size << "\n";

  os << "network.hidden = " << ints_str(cfg.hidden) << "\n";
  os << "network.time_embed = " << cfg.time_embed << "\n";
  os << "network.cond_embed = " << cfg.cond_embed << "\n";
  os << "network.activation = " << (cfg.activation == Activation::Silu ? "silu" : "tanh") << "\n";
  os << "network.seed = " << cfg.network_seed << "\n";

  os << "prior.steps = " << cfg.prior_steps << "\n";
  os << "prior.batch = " << cfg.prior_batch << "\n";
  os << "prior.lr = " << format_double(cfg.prior_lr) << "\n";
  os << "prior.seed = " << cfg.prior_seed << "\n";

  os << "distill.loss = " << distill_loss_str(cfg.loss) << "\n";
  os << "distill.cfg_scale = "
     << (cfg.cfg_scale_auto ? std::string("auto") : format_double(cfg.cfg_scale)) << "\n";
  os << "distill.class_id = " << cfg.class_id << "\n";
  os << "distill.solver = " << solver_name(cfg.solver) << "\n";
  os << "distill.nfe = " << cfg.nfe << "\n";
  os << "distill.t_min = " << format_double(cfg.t_min) << "\n";
  os << "distill.t_max = " << format_double(cfg.t_max) << "\n";
  os << "distill.steps = " << cfg.distill_steps << "\n";
  os << "distill.warmup = " << (cfg.warmup_auto ? std::string("auto") : std::to_string(cfg.warmup))
     << "\n";
  os << "distill.lr = " << format_double(cfg.distill_lr) << "\n";
  os << "distill.include_jacobian = " << (cfg.include_jacobian ? "true" : "false") << "\n";
  os << "distill.inversion_cfg_scale = " << format_double(cfg.inversion_cfg_scale) << "\n";
  os << "distill.explicit_ds_scale = " << (cfg.explicit_ds_scale ? "true" : "false") << "\n";
  os << "distill.vf_ism_delta = " << format_double(cfg.vf_ism_delta) << "\n";
  os << "distill.vf_ism_steps = " << cfg.vf_ism_steps << "\n";
  os << "distill.seed = " << cfg.distill_seed << "\n";
  os << "distill.coherence_every = " << cfg.coherence_every << "\n";
  os << "distill.coherence_trials = " << cfg.coherence_trials << "\n";

  os << "asset.kind = " << (cfg.asset_kind == AssetKind::Latent ? "latent" : "splat") << "\n";
  os << "asset.init = " << (cfg.asset_init == InitMode::InDistribution ? "in" : "out") << "\n";
  os << "asset.seed = " << cfg.asset_seed << "\n";
  os << "asset.splats = " << cfg.splats << "\n";

  os << "view.rot = " << format_double(cfg.view.rot) << "\n";
  os << "view.trans = " << format_double(cfg.view.trans) << "\n";

  os << "run.out_dir = " << cfg.out_dir << "\n";
  os << "sweep.target = " << cfg.sweep_target << "\n";
}

inline std::string dump_config(const ExperimentConfig& cfg) {
  std::ostringstream os;
  dump_config(cfg, os);
  return os.str();
}

}  // namespace flowlab
