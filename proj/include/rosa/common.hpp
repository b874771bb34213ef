#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rosa {

using Vec = std::vector<double>;

// Bad call-site input: out-of-range index, mismatched length, invalid config value.
struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Non-finite values or a breakdown inside a numeric routine.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Inconsistent experiment / mechanism configuration.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ArgumentError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) {
  double s = 0.0;
  for (double v : a) s += v * v;
  return std::sqrt(s);
}

// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw ArgumentError("axpy: length mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline void scale(double alpha, std::span<double> x) {
  for (double& v : x) v *= alpha;
}

inline bool all_finite(std::span<const double> x) {
  for (double v : x) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace rosa
