#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace springtwin {

using Vec3 = Eigen::Vector3d;
using Points = std::vector<Vec3>;

/// Base of every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input failed validation. `field()` is the dotted path of the offending
/// field, e.g. "controllers.positions[2][7]".
class ValidationError : public Error {
 public:
  ValidationError(std::string field, const std::string& rule)
      : Error(field + ": " + rule), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class SchemaError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class DimensionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class NonFiniteError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class DegenerateEdgeError : public Error {
 public:
  DegenerateEdgeError(std::size_t i, std::size_t j)
      : Error("degenerate edge (" + std::to_string(i) + ", " + std::to_string(j) +
              "): coincident endpoints"),
        i_(i),
        j_(j) {}
  std::size_t i() const noexcept { return i_; }
  std::size_t j() const noexcept { return j_; }

 private:
  std::size_t i_, j_;
};

class NonFiniteForceError : public Error {
 public:
  explicit NonFiniteForceError(std::size_t point)
      : Error("non-finite force on point " + std::to_string(point)), point_(point) {}
  std::size_t point() const noexcept { return point_; }

 private:
  std::size_t point_;
};

/// Simulation diverged past the configured coordinate bound.
class InstabilityError : public Error {
 public:
  InstabilityError(std::size_t frame, const std::string& detail)
      : Error("simulation unstable at frame " + std::to_string(frame) + ": " + detail),
        frame_(frame) {}
  std::size_t frame() const noexcept { return frame_; }

 private:
  std::size_t frame_;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

inline bool all_finite(const Vec3& v) { return v.allFinite(); }

inline bool all_finite(const Points& pts) {
  for (const auto& p : pts)
    if (!p.allFinite()) return false;
  return true;
}

inline double sigmoid(double y) {
  if (y >= 0) return 1.0 / (1.0 + std::exp(-y));
  const double e = std::exp(y);
  return e / (1.0 + e);
}

}  // namespace springtwin
