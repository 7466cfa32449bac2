#pragma once

#include "wr2l/common.hpp"
#include "wr2l/envs.hpp"
#include "wr2l/param_vector.hpp"

#include <filesystem>
#include <vector>

namespace wr2l {

// Equal-weight empirical measure (1/n) Σ δ_{x_i}.
class EmpiricalDist {
 public:
  explicit EmpiricalDist(std::vector<Vec> points);
  // Scalar samples.
  static EmpiricalDist from_scalars(const std::vector<double>& xs);

  std::size_t size() const { return points_.size(); }
  Eigen::Index dim() const { return points_.front().size(); }
  const std::vector<Vec>& points() const { return points_; }
  // Points as the columns of a dim x size matrix.
  Mat as_matrix() const;

 private:
  std::vector<Vec> points_;
};

// Transport plan between two empirical measures; kappa(i, j) is the mass
// moved from source point i to target point j.
struct CouplingMatrix {
  Mat kappa;
};

struct OptimalTransport {
  CouplingMatrix coupling;
  double cost = 0.0;  // Σ κ_ij ‖x_i − y_j‖²
};

// Exact minimum-cost perfect matching between the columns of `xs` and `ys`
// (equal counts) under squared Euclidean cost. Returns row -> column.
//
// Works on a sparse candidate graph of near neighbours, then checks the dual
// certificate against every pair and grows the graph until no pair violates
// it, so the result is optimal over the full bipartite graph.
std::vector<int> solve_assignment(const Mat& xs, const Mat& ys);

// Exact optimal transport for unequal counts: integer min-cost flow with
// supplies m/g and demands n/g (g = gcd(n, m)) by successive shortest paths.
OptimalTransport solve_transport(const Mat& xs, const Mat& ys);

// Optimal coupling for any sizes (assignment when n == m).
OptimalTransport optimal_coupling(const EmpiricalDist& mu,
                                  const EmpiricalDist& nu);

// Exact W₂² between empirical measures with Euclidean ground metric.
double w2_squared_empirical(const EmpiricalDist& mu, const EmpiricalDist& nu);

// Sorted (order-statistics) pairing for scalar samples. Falls back to the
// general solver when counts differ.
double w2_squared_1d(const EmpiricalDist& mu, const EmpiricalDist& nu);

// Closed form between N(m1, S1) and N(m2, S2):
// ‖m1 − m2‖² + tr(S1 + S2 − 2 (S2^½ S1 S2^½)^½).
double w2_squared_gaussian(const Vec& mean1, const Mat& cov1, const Vec& mean2,
                           const Mat& cov2);

// Symmetric PSD square root. Throws NumericalError when `m` is not
// (numerically) symmetric positive semidefinite.
Mat psd_sqrt(const Mat& m);

struct StateActionPair {
  Vec state;
  Action action;
};

// (s, a) pairs collected under uniform-random actions at the reference
// dynamics; the support of the expected-distance constraint.
struct StateActionBucket {
  EnvFamily family = EnvFamily::kCartPole;
  EnvOptions env_options;
  ParamVector source_params;
  std::uint64_t seed = 0;
  std::vector<StateActionPair> pairs;
};

StateActionBucket build_bucket(EnvFamily family, const ParamVector& phi0,
                               int n_pairs, std::uint64_t seed,
                               const EnvOptions& options = {});

struct ExpectedW2Options {
  int n_next = 1;
  std::uint64_t seed = 0;
  int jobs = 1;
};

// Mean over bucket pairs of W₂² between n_next successor samples under phi
// and under phi0.
double expected_w2(const StateActionBucket& bucket, const ParamVector& phi,
                   const ParamVector& phi0,
                   const ExpectedW2Options& options = {});

// Binary bucket cache. load_bucket checks the key (family, φ0, seed) and a
// checksum, throwing Error on mismatch or corruption.
void save_bucket(const StateActionBucket& bucket,
                 const std::filesystem::path& path);
StateActionBucket load_bucket(const std::filesystem::path& path);
StateActionBucket load_bucket(const std::filesystem::path& path,
                              EnvFamily family, const ParamVector& phi0,
                              std::uint64_t seed);

namespace detail {
// Order-independent mean: sorts the terms, then compensated summation.
double canonical_mean(std::vector<double> terms, double denominator);
}  // namespace detail

}  // namespace wr2l
