#pragma once

#include "wr2l/common.hpp"

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace wr2l {

struct Bounds {
  double lo;
  double hi;
};

// Dynamics specification parameters of one simulator family: a dense vector
// with per-dimension labels and an optional physical-validity box.
class ParamVector {
 public:
  ParamVector() = default;
  ParamVector(Vec values, std::vector<std::string> names,
              std::vector<Bounds> bounds = {});

  // Unlabelled vector, names default to p0, p1, ...
  static ParamVector from_values(Vec values);

  Eigen::Index dim() const { return values_.size(); }
  const Vec& values() const { return values_; }
  double operator[](Eigen::Index i) const { return values_[i]; }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<Bounds>& bounds() const { return bounds_; }
  bool has_bounds() const { return !bounds_.empty(); }

  // True when every value is finite and inside its bounds.
  bool is_valid() const;
  // Throws PhysicalBoundsError naming the first offending dimension.
  void validate() const;

  // Same labels and bounds, new values. Does not validate.
  ParamVector with_values(Vec values) const;

  friend bool operator==(const ParamVector& a, const ParamVector& b) {
    return a.values_.size() == b.values_.size() && a.values_ == b.values_ &&
           a.names_ == b.names_;
  }

 private:
  Vec values_;
  std::vector<std::string> names_;
  std::vector<Bounds> bounds_;
};

// Throws DimensionMismatch unless a and b have equal dimension.
void require_same_dim(const ParamVector& a, const ParamVector& b);

// ½ (phi - phi0)ᵀ H (phi - phi0)
double ellipsoid_value(const Vec& phi, const Vec& phi0, const Mat& hessian);

}  // namespace wr2l
