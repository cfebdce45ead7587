#pragma once
// Dense vector/matrix helpers on std::vector<double>. Everything is row-major
// and bounds are validated at the operation level, not per element.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace flowlab {

using Vec = std::vector<double>;

inline void check_same_size(const Vec& a, const Vec& b, const char* what) {
  if (a.size() != b.size()) throw std::invalid_argument(std::string(what) + ": size mismatch");
}

inline double dot(const Vec& a, const Vec& b) {
  check_same_size(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double l2_norm(const Vec& a) { return std::sqrt(dot(a, a)); }

inline Vec add(const Vec& a, const Vec& b) {
  check_same_size(a, b, "add");
  Vec r(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] + b[i];
  return r;
}

inline Vec sub(const Vec& a, const Vec& b) {
  check_same_size(a, b, "sub");
  Vec r(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] - b[i];
  return r;
}

inline Vec scaled(const Vec& a, double s) {
  Vec r(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = s * a[i];
  return r;
}

// y += s * x
inline void axpy(double s, const Vec& x, Vec& y) {
  check_same_size(x, y, "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += s * x[i];
}

inline double l2_dist(const Vec& a, const Vec& b) {
  check_same_size(a, b, "l2_dist");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

inline double max_abs_diff(const Vec& a, const Vec& b) {
  check_same_size(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline bool all_finite(const Vec& a) {
  for (double x : a)
    if (!std::isfinite(x)) return false;
  return true;
}

// Cosine similarity with an explicit zero-vector rule: norms below tol count
// as zero; two zeros are perfectly aligned, a zero against a non-zero is 0.
inline double cosine_similarity(const Vec& a, const Vec& b, double tol = 1e-12) {
  check_same_size(a, b, "cosine_similarity");
  double na = l2_norm(a), nb = l2_norm(b);
  bool za = na <= tol, zb = nb <= tol;
  if (za && zb) return 1.0;
  if (za || zb) return 0.0;
  return dot(a, b) / (na * nb);
}

struct Matrix {
  int rows = 0;
  int cols = 0;
  Vec data;  // row-major, rows*cols

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(std::size_t(r) * c, 0.0) {}

  double& at(int r, int c) { return data[std::size_t(r) * cols + c]; }
  double at(int r, int c) const { return data[std::size_t(r) * cols + c]; }
};

// y = M x
inline Vec matvec(const Matrix& m, const Vec& x) {
  if (int(x.size()) != m.cols) throw std::invalid_argument("matvec: size mismatch");
  Vec y(m.rows, 0.0);
  for (int r = 0; r < m.rows; ++r) {
    double s = 0.0;
    const double* row = m.data.data() + std::size_t(r) * m.cols;
    for (int c = 0; c < m.cols; ++c) s += row[c] * x[c];
    y[r] = s;
  }
  return y;
}

// y = M^T x
inline Vec matvec_t(const Matrix& m, const Vec& x) {
  if (int(x.size()) != m.rows) throw std::invalid_argument("matvec_t: size mismatch");
  Vec y(m.cols, 0.0);
  for (int r = 0; r < m.rows; ++r) {
    const double* row = m.data.data() + std::size_t(r) * m.cols;
    for (int c = 0; c < m.cols; ++c) y[c] += row[c] * x[r];
  }
  return y;
}

}  // namespace flowlab
