#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace pfadapt {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

inline Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
inline Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
inline Point operator*(double s, Point a) { return {s * a.x, s * a.y}; }
inline double dot(Point a, Point b) { return a.x * b.x + a.y * b.y; }
inline double norm(Point a) { return std::sqrt(dot(a, a)); }

/// Selects between the OpenMP kernels and the serial reference code paths.
enum class Exec { serial, parallel };

/// Base class of all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid input supplied by the caller (bad mesh request, bad coefficient, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

/// A numerical procedure failed to reach its contract (solver breakdown,
/// non-convergence, violated identity).
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Configuration file problems; carries the offending line when known.
class ConfigError : public InputError {
 public:
  using InputError::InputError;
};

}  // namespace pfadapt
