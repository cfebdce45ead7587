#pragma once
// Run metrics and their CSV serialization. Numbers are written with
// shortest-round-trip formatting so a parse/write cycle is lossless and
// reruns of a deterministic experiment produce byte-identical files.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <system_error>
#include <utility>
#include <vector>

#include "flowlab/errors.hpp"

namespace flowlab {

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw io_error("bad numeric field: '" + s + "'");
  return v;
}

struct MetricsRow {
  long long step = 0;
  std::string loss_tag;
  double residual_norm = 0.0;
  std::optional<double> coherence;
  long long nfe = 0;
  double param_norm = 0.0;
  double wall_ms = 0.0;
};

struct RunMetrics {
  std::vector<MetricsRow> rows;
  std::vector<std::pair<std::string, double>> summary;

  long long total_nfe() const {
    long long total = 0;
    for (const auto& r : rows) total += r.nfe;
    return total;
  }
};

inline constexpr const char* kMetricsHeader =
    "step,loss,residual_norm,grad_coherence,nfe,param_norm,wall_ms";

inline void write_metrics_csv(const RunMetrics& m, std::ostream& os) {
  os << kMetricsHeader << "\n";
  for (const auto& r : m.rows) {
    os << r.step << ',' << r.loss_tag << ',' << format_double(r.residual_norm) << ',';
    if (r.coherence) os << format_double(*r.coherence);
    os << ',' << r.nfe << ',' << format_double(r.param_norm) << ','
       << format_double(r.wall_ms) << "\n";
  }
}

inline void write_metrics_csv(const RunMetrics& m, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw io_error("cannot open " + path + " for writing");
  write_metrics_csv(m, os);
  os.flush();
  if (!os) throw io_error("write failed: " + path);
}

inline void write_summary_csv(const RunMetrics& m, std::ostream& os) {
  os << "metric,value\n";
  for (const auto& [key, value] : m.summary) os << key << ',' << format_double(value) << "\n";
}

inline void write_summary_csv(const RunMetrics& m, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw io_error("cannot open " + path + " for writing");
  write_summary_csv(m, os);
  os.flush();
  if (!os) throw io_error("write failed: " + path);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

inline RunMetrics read_metrics_csv(std::istream& is) {
  RunMetrics m;
  std::string line;
  if (!std::getline(is, line) || line != kMetricsHeader)
    throw io_error("bad metrics header: '" + line + "'");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != 7) throw io_error("bad metrics row: '" + line + "'");
    MetricsRow r;
    r.step = (long long)(parse_double(f[0]));
    r.loss_tag = f[1];
    r.residual_norm = parse_double(f[2]);
    if (!f[3].empty()) r.coherence = parse_double(f[3]);
    r.nfe = (long long)(parse_double(f[4]));
    r.param_norm = parse_double(f[5]);
    r.wall_ms = parse_double(f[6]);
    m.rows.push_back(std::move(r));
  }
  return m;
}

inline RunMetrics read_metrics_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw missing_artifact_error("metrics not found: " + path);
  return read_metrics_csv(is);
}

inline std::vector<std::pair<std::string, double>> read_summary_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw missing_artifact_error("summary not found: " + path);
  std::string line;
  if (!std::getline(is, line) || line != "metric,value")
    throw io_error("bad summary header: '" + line + "'");
  std::vector<std::pair<std::string, double>> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != 2) throw io_error("bad summary row: '" + line + "'");
    out.emplace_back(f[0], parse_double(f[1]));
  }
  return out;
}

}  // namespace flowlab
