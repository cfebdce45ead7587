#pragma once
// Synthetic training distributions at three scales: a labeled two-component
// Gaussian mixture, the two-moons curve pair, and 16x16 grayscale shape
// images. Plus the energy-distance sample metric and a binary dataset format.

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "flowlab/errors.hpp"
#include "flowlab/io.hpp"
#include "flowlab/rng.hpp"
#include "flowlab/vec.hpp"

namespace flowlab {

enum class DatasetName : std::uint8_t { Gauss2 = 0, Moons = 1, Shapes16 = 2 };

inline const char* dataset_name_str(DatasetName n) {
  switch (n) {
    case DatasetName::Gauss2: return "gauss2";
    case DatasetName::Moons: return "moons";
    case DatasetName::Shapes16: return "shapes16";
  }
  return "?";
}

inline DatasetName parse_dataset_name(const std::string& s) {
  if (s == "gauss2") return DatasetName::Gauss2;
  if (s == "moons") return DatasetName::Moons;
  if (s == "shapes16") return DatasetName::Shapes16;
  throw config_error("unknown dataset: " + s);
}

struct DatasetSpec {
  DatasetName name = DatasetName::Gauss2;
  int size = 4096;
  std::uint64_t seed = 1;
  // gauss2: two isotropic modes, labels 1 and 2
  Vec center1{-2.0, 0.0};
  Vec center2{2.0, 0.0};
  double sigma = 0.3;
  // moons: arc noise
  double moons_noise = 0.05;
  // shapes16: canvas side length
  int image_size = 16;

  void validate() const {
    if (size <= 0) throw config_error("dataset: size must be positive");
    if (name == DatasetName::Gauss2 && !(sigma > 0.0))
      throw config_error("dataset: sigma must be positive");
    if (name == DatasetName::Moons && moons_noise < 0.0)
      throw config_error("dataset: moons_noise must be non-negative");
    if (name == DatasetName::Shapes16 && image_size < 4)
      throw config_error("dataset: image_size must be at least 4");
    if (center1.size() != 2 || center2.size() != 2)
      throw config_error("dataset: gauss2 centers must be 2-dimensional");
  }
};

// Labels run 1..num_classes; 0 stays reserved for the null label during
// conditioning, so it never appears in data.
struct Dataset {
  int dim = 0;
  int num_classes = 0;
  std::vector<Vec> points;
  std::vector<int> labels;

  Vec mean() const {
    Vec m(dim, 0.0);
    for (const Vec& p : points) axpy(1.0 / double(points.size()), p, m);
    return m;
  }

  Vec class_mean(int cls) const {
    Vec m(dim, 0.0);
    int n = 0;
    for (std::size_t i = 0; i < points.size(); ++i)
      if (labels[i] == cls) {
        axpy(1.0, points[i], m);
        ++n;
      }
    if (n == 0) throw std::invalid_argument("class_mean: no points with label " +
                                            std::to_string(cls));
    for (double& v : m) v /= n;
    return m;
  }

  // Mean and standard deviation over every scalar entry; used to seed
  // image-space assets at plausible brightness.
  double scalar_mean() const {
    double s = 0.0;
    for (const Vec& p : points)
      for (double v : p) s += v;
    return s / (double(points.size()) * dim);
  }

  double scalar_std() const {
    double mu = scalar_mean();
    double s = 0.0;
    for (const Vec& p : points)
      for (double v : p) s += (v - mu) * (v - mu);
    return std::sqrt(s / (double(points.size()) * dim));
  }
};

namespace detail {

inline double clamp_unit(double v) { return v < -1.0 ? -1.0 : (v > 1.0 ? 1.0 : v); }

// One shape image; the draw order per sample is pinned: class, center jitter
// (2), then the per-class shape parameters.
inline void render_shape(Rng& rng, int w, int cls, Vec& out) {
  constexpr double kPi = 3.14159265358979323846;
  const double edge = 1.5 / 16.0;  // soft boundary width in unit coordinates
  double cx = 0.5 + rng.uniform(-0.09, 0.09);
  double cy = 0.5 + rng.uniform(-0.09, 0.09);
  double r = rng.uniform(0.22, 0.34);
  double half = rng.uniform(0.05, 0.09);
  double cell = rng.uniform(0.18, 0.30);
  double pu = rng.uniform(0.0, 2.0 * kPi);
  double pv = rng.uniform(0.0, 2.0 * kPi);
  for (int i = 0; i < w; ++i) {
    double v = (i + 0.5) / w;
    for (int j = 0; j < w; ++j) {
      double u = (j + 0.5) / w;
      double val = -1.0;
      if (cls == 1) {  // filled disk
        double d = std::hypot(u - cx, v - cy);
        val = clamp_unit((r - d) / edge);
      } else if (cls == 2) {  // ring
        double d = std::hypot(u - cx, v - cy);
        val = clamp_unit((half - std::abs(d - r)) / edge);
      } else if (cls == 3) {  // axis-aligned cross through the center
        double d = std::min(std::abs(u - cx), std::abs(v - cy));
        val = clamp_unit((half - d) / edge);
      } else {  // checker
        double s = std::sin(kPi * (u / cell) * 2.0 + pu) * std::sin(kPi * (v / cell) * 2.0 + pv);
        val = clamp_unit(2.5 * s);
      }
      out[std::size_t(i) * w + j] = val;
    }
  }
}

}  // namespace detail

inline Dataset generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  Dataset ds;
  ds.points.reserve(std::size_t(spec.size));
  ds.labels.reserve(std::size_t(spec.size));
  constexpr double kPi = 3.14159265358979323846;
  switch (spec.name) {
    case DatasetName::Gauss2: {
      ds.dim = 2;
      ds.num_classes = 2;
      for (int i = 0; i < spec.size; ++i) {
        bool second = rng.uniform() < 0.5;
        const Vec& c = second ? spec.center2 : spec.center1;
        ds.points.push_back({c[0] + spec.sigma * rng.normal(), c[1] + spec.sigma * rng.normal()});
        ds.labels.push_back(second ? 2 : 1);
      }
      break;
    }
    case DatasetName::Moons: {
      ds.dim = 2;
      ds.num_classes = 2;
      for (int i = 0; i < spec.size; ++i) {
        bool second = rng.uniform() < 0.5;
        double a = rng.uniform(0.0, kPi);
        double x = second ? 1.0 - std::cos(a) : std::cos(a);
        double y = second ? 0.5 - std::sin(a) : std::sin(a);
        ds.points.push_back(
            {x + spec.moons_noise * rng.normal(), y + spec.moons_noise * rng.normal()});
        ds.labels.push_back(second ? 2 : 1);
      }
      break;
    }
    case DatasetName::Shapes16: {
      int w = spec.image_size;
      ds.dim = w * w;
      ds.num_classes = 4;
      for (int i = 0; i < spec.size; ++i) {
        int cls = 1 + int(rng.below(4));
        Vec img(std::size_t(ds.dim));
        detail::render_shape(rng, w, cls, img);
        ds.points.push_back(std::move(img));
        ds.labels.push_back(cls);
      }
      break;
    }
  }
  return ds;
}

// Energy distance V-statistic between two samples:
//   2 E||a - b|| - E||a - a'|| - E||b - b'||,
// all pairs included. Zero for identical samples, positive when the
// underlying distributions differ.
inline double energy_distance(const std::vector<Vec>& a, const std::vector<Vec>& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("energy_distance: empty sample");
  const std::size_t n = a.size(), m = b.size();
  double cross = 0.0;
  for (const Vec& pa : a)
    for (const Vec& pb : b) cross += l2_dist(pa, pb);
  double within_a = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) within_a += 2.0 * l2_dist(a[i], a[j]);
  double within_b = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) within_b += 2.0 * l2_dist(b[i], b[j]);
  return 2.0 * cross / (double(n) * double(m)) - within_a / (double(n) * double(n)) -
         within_b / (double(m) * double(m));
}

// ---- dataset file format ----
// "RFDS" | u32 version | u32 dim | u32 num_classes | u32 count
// | count x (u32 label, dim x f32).

inline constexpr char kDatasetMagic[4] = {'R', 'F', 'D', 'S'};
inline constexpr std::uint32_t kDatasetVersion = 1;

inline void save_dataset(const Dataset& ds, std::ostream& os) {
  io::write_magic(os, kDatasetMagic);
  io::write_u32(os, kDatasetVersion);
  io::write_u32(os, std::uint32_t(ds.dim));
  io::write_u32(os, std::uint32_t(ds.num_classes));
  io::write_u32(os, std::uint32_t(ds.points.size()));
  for (std::size_t i = 0; i < ds.points.size(); ++i) {
    io::write_u32(os, std::uint32_t(ds.labels[i]));
    for (double v : ds.points[i]) io::write_f32(os, float(v));
  }
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot open " + path + " for writing");
  save_dataset(ds, os);
  os.flush();
  if (!os) throw io_error("write failed: " + path);
}

inline Dataset load_dataset(std::istream& is) {
  io::expect_magic(is, kDatasetMagic);
  io::expect_version(is, kDatasetVersion);
  Dataset ds;
  ds.dim = int(io::read_u32(is, "dim"));
  ds.num_classes = int(io::read_u32(is, "num_classes"));
  std::uint32_t count = io::read_u32(is, "count");
  if (ds.dim <= 0 || count == 0) throw io_error("empty or dimensionless dataset");
  ds.points.reserve(count);
  ds.labels.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    int label = int(io::read_u32(is, "label"));
    if (label < 1 || label > ds.num_classes) throw io_error("label out of range");
    Vec p(std::size_t(ds.dim));
    for (double& v : p) {
      v = double(io::read_f32(is, "point"));
      if (!std::isfinite(v)) throw io_error("non-finite point value");
    }
    ds.points.push_back(std::move(p));
    ds.labels.push_back(label);
  }
  return ds;
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw missing_artifact_error("dataset not found: " + path);
  return load_dataset(is);
}

}  // namespace flowlab
