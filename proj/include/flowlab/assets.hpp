#pragma once
// Distillable parametric assets. A latent asset is a raw data-space vector;
// a splat asset is a K-blob anisotropic Gaussian canvas with a global
// background, rendered through a rigid 2D view transform with an exact
// analytic adjoint for every parameter.

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "flowlab/errors.hpp"
#include "flowlab/io.hpp"
#include "flowlab/rng.hpp"
#include "flowlab/vec.hpp"

namespace flowlab {

enum class AssetKind : std::uint8_t { Latent = 0, Splat = 1 };
enum class InitMode : std::uint8_t { InDistribution = 0, OutOfDistribution = 1 };

inline const char* asset_kind_str(AssetKind k) {
  return k == AssetKind::Latent ? "latent" : "splat";
}

// Rigid canvas pose: rotate by angle about the canvas center, then translate.
// Latent assets ignore the pose entirely.
struct ViewPose {
  double angle = 0.0;
  double tx = 0.0;
  double ty = 0.0;
};

struct ViewRanges {
  double rot = 0.39269908169872414;  // pi/8
  double trans = 0.05;
};

inline ViewPose sample_view(Rng& rng, const ViewRanges& ranges) {
  ViewPose p;
  p.angle = rng.uniform(-ranges.rot, ranges.rot);
  p.tx = rng.uniform(-ranges.trans, ranges.trans);
  p.ty = rng.uniform(-ranges.trans, ranges.trans);
  return p;
}

// Splat parameter block layout: per splat [cu, cv, log_sigma_u, log_sigma_v,
// rho, amp], then one trailing background value.
inline constexpr int kSplatParams = 6;

struct Asset {
  AssetKind kind = AssetKind::Latent;
  int dim = 0;          // rendered data-space dimension
  int canvas_size = 0;  // W for splat assets (dim = W*W), 0 for latent
  int splat_count = 0;  // K for splat assets, 0 for latent
  Vec params;

  void validate() const {
    if (dim <= 0) throw std::invalid_argument("asset: dim must be positive");
    if (kind == AssetKind::Latent) {
      if (int(params.size()) != dim)
        throw std::invalid_argument("asset: latent parameter count must equal dim");
    } else {
      if (canvas_size < 4 || canvas_size * canvas_size != dim)
        throw std::invalid_argument("asset: splat canvas must satisfy dim = W*W, W >= 4");
      if (splat_count <= 0 || int(params.size()) != kSplatParams * splat_count + 1)
        throw std::invalid_argument("asset: splat parameter count must be 6K+1");
    }
  }
};

namespace detail {

// Log-scales are clamped to keep sigma in [e^-6, e^3]; outside that band the
// scale gradient is defined as zero.
inline constexpr double kLogScaleMin = -6.0;
inline constexpr double kLogScaleMax = 3.0;

inline double clamp_log_scale(double ls) {
  return ls < kLogScaleMin ? kLogScaleMin : (ls > kLogScaleMax ? kLogScaleMax : ls);
}

struct SplatFrame {
  double cu, cv;      // view-space center
  double inv_su2, inv_sv2;
  double cos_r, sin_r;  // view-space orientation rho + angle
  double amp;
  bool scale_u_clamped, scale_v_clamped;
};

inline SplatFrame splat_frame(const double* p, const ViewPose& view) {
  SplatFrame f;
  double ca = std::cos(view.angle), sa = std::sin(view.angle);
  double du = p[0] - 0.5, dv = p[1] - 0.5;
  f.cu = ca * du - sa * dv + 0.5 + view.tx;
  f.cv = sa * du + ca * dv + 0.5 + view.ty;
  double lsu = clamp_log_scale(p[2]);
  double lsv = clamp_log_scale(p[3]);
  f.scale_u_clamped = lsu != p[2];
  f.scale_v_clamped = lsv != p[3];
  double su = std::exp(lsu), sv = std::exp(lsv);
  f.inv_su2 = 1.0 / (su * su);
  f.inv_sv2 = 1.0 / (sv * sv);
  double r = p[4] + view.angle;
  f.cos_r = std::cos(r);
  f.sin_r = std::sin(r);
  f.amp = p[5];
  return f;
}

}  // namespace detail

// Deterministic render of the asset under the given pose. Splat canvases are
// row-major with pixel centers at ((j+0.5)/W, (i+0.5)/W) and values in
// (-1, 1) through the final tanh.
inline Vec render(const Asset& asset, const ViewPose& view = {}) {
  asset.validate();
  if (asset.kind == AssetKind::Latent) return asset.params;

  int w = asset.canvas_size;
  std::vector<detail::SplatFrame> frames;
  frames.reserve(std::size_t(asset.splat_count));
  for (int k = 0; k < asset.splat_count; ++k)
    frames.push_back(detail::splat_frame(asset.params.data() + std::size_t(k) * kSplatParams, view));
  double background = asset.params.back();

  Vec out(std::size_t(asset.dim));
  for (int i = 0; i < w; ++i) {
    double pv = (i + 0.5) / w;
    for (int j = 0; j < w; ++j) {
      double pu = (j + 0.5) / w;
      double s = background;
      for (const auto& f : frames) {
        double du = pu - f.cu, dv = pv - f.cv;
        double zu = f.cos_r * du + f.sin_r * dv;
        double zv = -f.sin_r * du + f.cos_r * dv;
        double q = zu * zu * f.inv_su2 + zv * zv * f.inv_sv2;
        s += f.amp * std::exp(-0.5 * q);
      }
      out[std::size_t(i) * w + j] = std::tanh(s);
    }
  }
  return out;
}

// Exact adjoint of render: pulls a data-space gradient back to parameter
// space under the same pose. No stochastic terms are introduced here; the
// caller's gradient passes through unchanged for latent assets.
inline Vec backprop_view(const Asset& asset, const ViewPose& view, const Vec& grad_x) {
  asset.validate();
  if (int(grad_x.size()) != asset.dim)
    throw std::invalid_argument("backprop_view: gradient has wrong dimension");
  if (asset.kind == AssetKind::Latent) return grad_x;

  int w = asset.canvas_size;
  std::vector<detail::SplatFrame> frames;
  frames.reserve(std::size_t(asset.splat_count));
  for (int k = 0; k < asset.splat_count; ++k)
    frames.push_back(detail::splat_frame(asset.params.data() + std::size_t(k) * kSplatParams, view));
  double background = asset.params.back();

  Vec grads(asset.params.size(), 0.0);
  double ca = std::cos(view.angle), sa = std::sin(view.angle);
  for (int i = 0; i < w; ++i) {
    double pv = (i + 0.5) / w;
    for (int j = 0; j < w; ++j) {
      double pu = (j + 0.5) / w;
      double s = background;
      std::size_t pix = std::size_t(i) * w + j;
      // First pass: the pixel's pre-activation sum.
      for (const auto& f : frames) {
        double du = pu - f.cu, dv = pv - f.cv;
        double zu = f.cos_r * du + f.sin_r * dv;
        double zv = -f.sin_r * du + f.cos_r * dv;
        double q = zu * zu * f.inv_su2 + zv * zv * f.inv_sv2;
        s += f.amp * std::exp(-0.5 * q);
      }
      double th = std::tanh(s);
      double up = grad_x[pix] * (1.0 - th * th);
      if (up == 0.0) continue;
      grads[grads.size() - 1] += up;
      for (int k = 0; k < asset.splat_count; ++k) {
        const auto& f = frames[std::size_t(k)];
        double du = pu - f.cu, dv = pv - f.cv;
        double zu = f.cos_r * du + f.sin_r * dv;
        double zv = -f.sin_r * du + f.cos_r * dv;
        double q = zu * zu * f.inv_su2 + zv * zv * f.inv_sv2;
        double g = std::exp(-0.5 * q);
        double a = f.amp * g;
        double hu = zu * f.inv_su2, hv = zv * f.inv_sv2;
        double* gp = grads.data() + std::size_t(k) * kSplatParams;
        // View-space center gradient, rotated back into asset space.
        double gcu = a * (f.cos_r * hu - f.sin_r * hv);
        double gcv = a * (f.sin_r * hu + f.cos_r * hv);
        gp[0] += up * (ca * gcu + sa * gcv);
        gp[1] += up * (-sa * gcu + ca * gcv);
        if (!f.scale_u_clamped) gp[2] += up * a * zu * hu;
        if (!f.scale_v_clamped) gp[3] += up * a * zv * hv;
        gp[4] += up * (-a) * (hu * zv - hv * zu);
        gp[5] += up * g;
      }
    }
  }
  return grads;
}

struct AssetInitMeta {
  int dim = 0;
  Vec data_mean;           // latent in-distribution target
  double pixel_mean = 0.0;  // splat brightness statistics
  double pixel_std = 0.5;
  int canvas_size = 0;
  int splat_count = 24;
};

// Seeded initializers. Out-of-distribution starts are deliberately blank:
// the all-zero latent vector, or a flat gray canvas with zero amplitudes.
inline Asset init_asset(AssetKind kind, InitMode mode, std::uint64_t seed,
                        const AssetInitMeta& meta) {
  if (meta.dim <= 0) throw std::invalid_argument("init_asset: dim must be positive");
  Rng rng(seed);
  Asset asset;
  asset.kind = kind;
  asset.dim = meta.dim;
  if (kind == AssetKind::Latent) {
    if (mode == InitMode::InDistribution) {
      if (int(meta.data_mean.size()) != meta.dim)
        throw std::invalid_argument("init_asset: data_mean must match dim");
      asset.params.resize(std::size_t(meta.dim));
      for (int i = 0; i < meta.dim; ++i) asset.params[std::size_t(i)] =
          meta.data_mean[std::size_t(i)] + 0.05 * rng.normal();
    } else {
      asset.params.assign(std::size_t(meta.dim), 0.0);
    }
  } else {
    asset.canvas_size = meta.canvas_size;
    asset.splat_count = meta.splat_count;
    asset.params.assign(std::size_t(kSplatParams) * meta.splat_count + 1, 0.0);
    for (int k = 0; k < meta.splat_count; ++k) {
      double* p = asset.params.data() + std::size_t(k) * kSplatParams;
      p[0] = rng.uniform(0.25, 0.75);
      p[1] = rng.uniform(0.25, 0.75);
      if (mode == InitMode::InDistribution) {
        p[2] = rng.uniform(std::log(0.06), std::log(0.16));
        p[3] = rng.uniform(std::log(0.06), std::log(0.16));
        p[4] = rng.uniform(-0.4, 0.4);
        p[5] = meta.pixel_std * rng.uniform(0.4, 1.2);
      } else {
        p[2] = std::log(0.1);
        p[3] = std::log(0.1);
        p[4] = 0.0;
        p[5] = 0.0;
      }
    }
    double b = 0.0;
    if (mode == InitMode::InDistribution) {
      double m = meta.pixel_mean;
      m = m < -0.9 ? -0.9 : (m > 0.9 ? 0.9 : m);
      b = std::atanh(m);
    }
    asset.params.back() = b;
  }
  asset.validate();
  return asset;
}

// ---- asset file format ----
// "RFAS" | u32 version | u8 kind | u32 canvas_size | u32 splat_count
// | u32 param_count | f32 params.

inline constexpr char kAssetMagic[4] = {'R', 'F', 'A', 'S'};
inline constexpr std::uint32_t kAssetVersion = 1;

inline void save_asset(const Asset& asset, std::ostream& os) {
  asset.validate();
  io::write_magic(os, kAssetMagic);
  io::write_u32(os, kAssetVersion);
  io::write_u8(os, std::uint8_t(asset.kind));
  io::write_u32(os, std::uint32_t(asset.canvas_size));
  io::write_u32(os, std::uint32_t(asset.splat_count));
  io::write_u32(os, std::uint32_t(asset.params.size()));
  for (double p : asset.params) io::write_f32(os, float(p));
}

inline void save_asset(const Asset& asset, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot open " + path + " for writing");
  save_asset(asset, os);
  os.flush();
  if (!os) throw io_error("write failed: " + path);
}

// expected_dim pins the data-space dimension the caller is about to render
// into; latent assets take it as their own dim.
inline Asset load_asset(std::istream& is, int expected_dim) {
  io::expect_magic(is, kAssetMagic);
  io::expect_version(is, kAssetVersion);
  Asset asset;
  std::uint8_t kind = io::read_u8(is, "kind");
  if (kind > 1) throw io_error("unknown asset kind code");
  asset.kind = AssetKind(kind);
  asset.canvas_size = int(io::read_u32(is, "canvas_size"));
  asset.splat_count = int(io::read_u32(is, "splat_count"));
  std::uint32_t count = io::read_u32(is, "param_count");
  asset.params.resize(count);
  for (double& p : asset.params) p = double(io::read_f32(is, "param"));
  asset.dim = expected_dim;
  try {
    asset.validate();
  } catch (const std::invalid_argument& e) {
    throw io_error(std::string("inconsistent asset file: ") + e.what());
  }
  return asset;
}

inline Asset load_asset(const std::string& path, int expected_dim) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw missing_artifact_error("asset not found: " + path);
  return load_asset(is, expected_dim);
}

// 8-bit PGM dump mapping canvas values from [-1, 1] to [0, 255].
inline void write_pgm(const Vec& canvas, int w, const std::string& path) {
  if (int(canvas.size()) != w * w) throw std::invalid_argument("write_pgm: size must be W*W");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot open " + path + " for writing");
  os << "P5\n" << w << " " << w << "\n255\n";
  for (double v : canvas) {
    double scaled = (v + 1.0) * 0.5 * 255.0;
    int byte = int(scaled + 0.5);
    byte = byte < 0 ? 0 : (byte > 255 ? 255 : byte);
    os.put(char(byte));
  }
  os.flush();
  if (!os) throw io_error("write failed: " + path);
}

}  // namespace flowlab
