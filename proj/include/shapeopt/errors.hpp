#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace shapeopt {

struct invalid_argument : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// All classes (or all points) of a PMF carry zero probability.
struct degenerate_pmf : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct invalid_config : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct invalid_comparison : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class numeric_divergence : public std::runtime_error {
 public:
  numeric_divergence(const std::string& what, std::size_t step)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"),
        step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class parse_error : public std::runtime_error {
 public:
  parse_error(const std::string& what, std::size_t line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace shapeopt
