#pragma once
// Error taxonomy shared across the library. The CLI maps these to distinct
// exit codes, so keep the categories disjoint.

#include <stdexcept>
#include <string>

namespace flowlab {

// Malformed or inconsistent configuration (bad key, bad value, bad flag).
struct config_error : std::runtime_error {
  int line;  // 1-based line in the config text, 0 when not line-addressable
  explicit config_error(const std::string& msg, int line_no = 0)
      : std::runtime_error(line_no > 0 ? "line " + std::to_string(line_no) + ": " + msg : msg),
        line(line_no) {}
};

// A required input artifact (checkpoint, dataset, vector file) is missing.
struct missing_artifact_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// An artifact exists but its bytes are unusable (bad magic, truncation, ...).
struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A numeric invariant broke mid-run (non-finite loss, gradient, or params).
struct numeric_abort : std::runtime_error {
  long long step;  // step index at which the abort triggered, -1 if unknown
  explicit numeric_abort(const std::string& msg, long long step_no = -1)
      : std::runtime_error(step_no >= 0 ? msg + " at step " + std::to_string(step_no) : msg),
        step(step_no) {}
};

}  // namespace flowlab
