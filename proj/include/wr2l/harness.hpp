#pragma once

#include "wr2l/common.hpp"
#include "wr2l/envs.hpp"
#include "wr2l/param_vector.hpp"
#include "wr2l/policy.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace wr2l {

struct GridAxis {
  std::string name;
  std::vector<double> values;
};

// Cartesian product of parameter axes. Dimensions without an axis stay at
// the family's reference value.
struct EvalGrid {
  std::vector<GridAxis> axes;
  int episodes_per_point = 20;
  int max_episode_len = 1000;

  // n evenly spaced values over [lo, hi] on one axis.
  static EvalGrid linspace(const std::string& name, double lo, double hi,
                           int n, int episodes = 20, int max_len = 1000);
  // Pole length over [0.3, 3.0] (28 points) for cartpole; length × mass for
  // the pendulum; the first coordinate for the quadratic testbed.
  static EvalGrid default_for(EnvFamily family);

  // Throws InvalidArgument or PhysicalBoundsError.
  void validate(const ParamVector& reference) const;
  // Points in row-major order: the last axis varies fastest.
  std::vector<ParamVector> points(const ParamVector& reference) const;
};

// n parameter vectors drawn uniformly inside the reference bounds.
std::vector<ParamVector> sample_uniform_points(const ParamVector& reference,
                                               int n, std::uint64_t seed);

struct EvalRow {
  Vec params;
  double return_mean = 0.0;
  double return_std = 0.0;  // sample standard deviation over episodes
  int n_episodes = 0;
  bool failed = false;
  std::string error;
};

struct EvalReport {
  std::string family;
  std::vector<std::string> param_names;
  std::string checkpoint;
  std::uint64_t seed = 0;
  double epsilon = 0.0;
  bool mean_action = false;
  std::vector<EvalRow> rows;
  // Episodes whose return was re-summed from a logged reward trace.
  int audited_episodes = 0;
  int audit_mismatches = 0;

  // Lowest return_mean over points that did not fail.
  double worst_case() const;
  void write_csv(const std::filesystem::path& path) const;
  static EvalReport read_csv(const std::filesystem::path& path);
};

struct EvalOptions {
  EnvOptions env;
  bool mean_action = false;
  int jobs = 1;
  // Share of episodes whose reward trace is logged and re-summed.
  double audit_fraction = 0.01;
  std::string checkpoint;
  double epsilon = 0.0;
};

// Runs episodes_per_point episodes at every point. Point i draws from
// streams keyed by (seed, i), so results do not depend on `jobs`.
EvalReport evaluate_points(const Policy& policy, EnvFamily family,
                           const std::vector<ParamVector>& points,
                           int episodes_per_point, int max_episode_len,
                           std::uint64_t seed, const EvalOptions& options = {});

EvalReport evaluate_grid(const Policy& policy, EnvFamily family,
                         const EvalGrid& grid, std::uint64_t seed,
                         const EvalOptions& options = {});

struct PointComparison {
  Vec params;
  std::vector<double> returns;  // one per report
  int winner = -1;              // -1 on a tie or when any report failed
};

struct Comparison {
  std::vector<PointComparison> points;
  std::vector<double> worst_case;  // per report
  // Trapezoid area over a single axis; mean return for other grids.
  std::vector<double> auc;
  std::vector<int> wins;
  int ties = 0;
};

// Throws InvalidArgument on an empty list and DimensionMismatch when the
// reports were not produced on the same grid.
Comparison compare_policies(const std::vector<EvalReport>& reports,
                            double tie_tolerance = 0.0);

}  // namespace wr2l
