#pragma once

#include <stdexcept>
#include <string>

namespace spd {

// Invalid user-supplied data: bad records, bad listings, bad arguments.
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem problems: missing files, unwritable paths.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Assembly dialect problems; carries a 1-based line number when known.
struct ParseError : std::runtime_error {
  int line = 0;
  ParseError(const std::string& msg, int line_no = 0)
      : std::runtime_error(line_no > 0 ? "line " + std::to_string(line_no) + ": " + msg : msg),
        line(line_no) {}
};

// Non-finite loss or other unrecoverable optimisation failure.
struct TrainingDivergence : std::runtime_error {
  explicit TrainingDivergence(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace spd
