#include "wr2l/param_vector.hpp"

#include <cmath>
#include <sstream>

namespace wr2l {

ParamVector::ParamVector(Vec values, std::vector<std::string> names,
                         std::vector<Bounds> bounds)
    : values_(std::move(values)),
      names_(std::move(names)),
      bounds_(std::move(bounds)) {
  if (static_cast<Eigen::Index>(names_.size()) != values_.size()) {
    throw DimensionMismatch("ParamVector: names/values size mismatch");
  }
  if (!bounds_.empty() &&
      static_cast<Eigen::Index>(bounds_.size()) != values_.size()) {
    throw DimensionMismatch("ParamVector: bounds/values size mismatch");
  }
  for (const auto& b : bounds_) {
    if (!(b.lo <= b.hi)) throw InvalidArgument("ParamVector: empty bounds");
  }
}

ParamVector ParamVector::from_values(Vec values) {
  std::vector<std::string> names;
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    names.push_back("p" + std::to_string(i));
  }
  return ParamVector(std::move(values), std::move(names));
}

bool ParamVector::is_valid() const {
  for (Eigen::Index i = 0; i < values_.size(); ++i) {
    const double v = values_[i];
    if (!std::isfinite(v)) return false;
    if (!bounds_.empty() && (v < bounds_[i].lo || v > bounds_[i].hi)) {
      return false;
    }
  }
  return true;
}

void ParamVector::validate() const {
  for (Eigen::Index i = 0; i < values_.size(); ++i) {
    const double v = values_[i];
    std::ostringstream msg;
    if (!std::isfinite(v)) {
      msg << "parameter '" << names_[i] << "' is not finite";
      throw PhysicalBoundsError(msg.str());
    }
    if (!bounds_.empty() && (v < bounds_[i].lo || v > bounds_[i].hi)) {
      msg << "parameter '" << names_[i] << "' = " << v << " outside ["
          << bounds_[i].lo << ", " << bounds_[i].hi << "]";
      throw PhysicalBoundsError(msg.str());
    }
  }
}

ParamVector ParamVector::with_values(Vec values) const {
  if (values.size() != values_.size()) {
    throw DimensionMismatch("ParamVector::with_values: dimension changed");
  }
  ParamVector out = *this;
  out.values_ = std::move(values);
  return out;
}

void require_same_dim(const ParamVector& a, const ParamVector& b) {
  if (a.dim() != b.dim()) {
    throw DimensionMismatch("parameter dimension " + std::to_string(a.dim()) +
                            " vs " + std::to_string(b.dim()));
  }
}

double ellipsoid_value(const Vec& phi, const Vec& phi0, const Mat& hessian) {
  const Vec d = phi - phi0;
  return 0.5 * d.dot(hessian * d);
}

}  // namespace wr2l
