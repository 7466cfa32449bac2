#pragma once

#include "wr2l/common.hpp"
#include "wr2l/envs.hpp"
#include "wr2l/param_vector.hpp"
#include "wr2l/policy.hpp"
#include "wr2l/zo_estim.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace wr2l {

struct WolfeParams {
  double c1 = 1e-4;
  double c2 = 0.9;
  // First trial step. Steps never exceed 1, which would leave the
  // ellipsoid: both ends of the segment lie inside it.
  double alpha_init = 1.0;
  double alpha_min = 1e-3;
  int max_backtracks = 10;

  void validate() const;
};

struct WR2LConfig {
  // Radius of the average-Wasserstein ball. 0 pins φ at φ0 (plain PPO).
  double epsilon = 0.01;
  int inner_max_iters = 30;
  // Inner loop stops once ‖g‖∞ drops below this (times the first ‖g‖∞ when
  // relative). Infinity returns before any gradient is estimated.
  double inner_grad_tol = 0.01;
  bool inner_tol_relative = true;
  // Restart every inner loop at φ0 instead of the previous worst case.
  bool reset_inner = false;
  int outer_iters = 100;
  WolfeParams line_search;
  // Perturbation settings for the return gradient in Phase I.
  ZOConfig zo;
  // Episodes per perturbed return evaluation.
  int zo_episodes = 1;
  // Episodes per line-search trial evaluation.
  int line_search_episodes = 2;
  // Hessian of the expected distance at φ0, computed once.
  ZOConfig hessian_zo{0.05, 4000, true, 0, 100, 1};
  int bucket_pairs = 1000;
  int n_next = 1;
  PPOConfig ppo;
  int jobs = 1;

  void validate() const;
};

// x^{[j]} of the inner loop.
struct InnerState {
  ParamVector x;
  int j = 0;
  GradEstimate last_grad;
  double constraint_value = 0.0;  // ½ (x − φ0)ᵀ H0 (x − φ0)
};

struct ClosedForm {
  ParamVector phi;
  double lambda = 0.0;    // Lagrange multiplier of the ellipsoid constraint
  Vec step;               // −H0⁻¹ g scaled onto the boundary
  double stationarity = 0.0;  // ‖g + λ H0 (φ − φ0)‖
};

// argmin gᵀφ over ½ (φ − φ0)ᵀ H0 (φ − φ0) ≤ ε:
//   φ = φ0 − sqrt(2ε / gᵀH0⁻¹g) H0⁻¹ g.
// Throws InvalidArgument for g = 0 (inner convergence) and NumericalError
// when H0 is not positive definite.
ClosedForm closed_form_minimizer(const Vec& g, const Mat& h0,
                                 const ParamVector& phi0, double epsilon,
                                 SolveMethod method = SolveMethod::kDense);

// Value and derivative of the objective along a search line.
struct LinePoint {
  double value = 0.0;
  double slope = 0.0;
};

enum class LineSearchStatus { kWolfe, kBoundary, kFallback, kNotDescent };

struct LineSearchResult {
  double alpha = 0.0;
  LinePoint point;
  int evaluations = 0;
  LineSearchStatus status = LineSearchStatus::kWolfe;
};

// Bracketing search for α ∈ (0, alpha_init] satisfying
//   f(α) ≤ f(0) + c1 α f'(0)  and  f'(α) ≥ c2 f'(0).
// α = 1 is accepted on sufficient decrease alone, since larger steps leave
// the feasible set. Exhausting the budget yields alpha_min (kFallback).
LineSearchResult wolfe_line_search(
    const std::function<LinePoint(double)>& fn, const LinePoint& at_zero,
    const WolfeParams& params);

// Objective of Phase I: the expected return J(φ) for a fixed policy.
class PhaseOneObjective {
 public:
  virtual ~PhaseOneObjective() = default;
  virtual GradEstimate gradient(const ParamVector& x, std::uint64_t stream) = 0;
  // J and dJ/dα at x + α p.
  virtual LinePoint along(const ParamVector& x, const Vec& p, double alpha,
                          std::uint64_t stream) = 0;
};

// Exact J and ∇J of the quadratic testbed.
class AnalyticQuadObjective final : public PhaseOneObjective {
 public:
  explicit AnalyticQuadObjective(const EnvOptions& options);
  GradEstimate gradient(const ParamVector& x, std::uint64_t stream) override;
  LinePoint along(const ParamVector& x, const Vec& p, double alpha,
                  std::uint64_t stream) override;
  double value(const Vec& phi) const;

 private:
  Mat sym_;
  Vec optimum_;
  double offset_;
};

// Rollout-based J: zero-order gradient over perturbed dynamics, and line
// trials from paired evaluations at α ± δ under common random numbers.
class RolloutObjective final : public PhaseOneObjective {
 public:
  RolloutObjective(const Policy& policy, EnvFamily family,
                   const EnvOptions& options, const WR2LConfig& cfg);
  GradEstimate gradient(const ParamVector& x, std::uint64_t stream) override;
  LinePoint along(const ParamVector& x, const Vec& p, double alpha,
                  std::uint64_t stream) override;

 private:
  double evaluate(const ParamVector& phi, std::uint64_t stream) const;

  const Policy& policy_;
  EnvFamily family_;
  EnvOptions options_;
  const WR2LConfig& cfg_;
};

struct InnerStepResult {
  InnerState state;
  LineSearchResult line_search;
  bool converged = false;  // p = 0 or zero gradient
};

// One Phase-I step: p = closed_form(g) − x, then x + α p with α from the
// Wolfe search on the objective along p. p is cut where it would come
// within box_margin of a physical bound.
InnerStepResult inner_descent_step(const InnerState& state, const Vec& g,
                                   const Mat& h0, const ParamVector& phi0,
                                   double epsilon, const WolfeParams& wolfe,
                                   PhaseOneObjective& objective,
                                   std::uint64_t stream, double box_margin = 0.0);

struct InnerResult {
  ParamVector phi;
  int iterations = 0;
  int line_search_fallbacks = 0;
  std::vector<double> objective_trace;  // J at each accepted iterate
  std::vector<double> constraint_trace;
};

InnerResult inner_loop(PhaseOneObjective& objective,
                       const ParamVector& phi_init, const Mat& h0,
                       const ParamVector& phi0, const WR2LConfig& cfg,
                       std::uint64_t stream);

struct TrainRow {
  int k = 0;
  Vec phi;
  double return_mean = 0.0;
  double constraint = 0.0;
  double entropy = 0.0;
  double seconds = 0.0;
  int inner_iterations = 0;
  int line_search_fallbacks = 0;
  bool ppo_aborted = false;
};

struct TrainReport {
  std::string family;
  std::vector<std::string> param_names;
  std::uint64_t seed = 0;
  double epsilon = 0.0;
  std::vector<TrainRow> rows;
  std::vector<std::string> notes;

  // One row per outer iteration after `#`-prefixed metadata lines.
  void write_csv(const std::filesystem::path& path) const;
};

struct TrainResult {
  Policy policy;
  ParamVector phi;
  TrainReport report;
  std::optional<HessianEstimate> h0;
};

struct TrainOptions {
  EnvOptions env;
  // Defaults to the family's reference parameters.
  std::optional<ParamVector> phi0;
  // Skips the Hessian estimation when given.
  std::optional<HessianEstimate> h0;
  // Called after every outer iteration.
  std::function<void(const TrainRow&)> on_iteration;
};

// Alternates Phase I (inner_loop) and Phase II (one PPO update on rollouts
// under the new φ) for outer_iters or until the policy entropy falls below
// the stop threshold.
TrainResult train(const WR2LConfig& cfg, EnvFamily family, std::uint64_t seed,
                  const TrainOptions& options = {});

// Plain PPO on the reference dynamics with the same random streams as
// train(), so ε = 0 reproduces it exactly.
TrainResult train_ppo(const PPOConfig& cfg, int outer_iters, EnvFamily family,
                      std::uint64_t seed, const TrainOptions& options = {});

// Dynamics Hessian used by train(): bucket at φ0, then the zero-order
// estimate of ∇²expected_w2.
HessianEstimate estimate_reference_hessian(const WR2LConfig& cfg,
                                           EnvFamily family,
                                           const ParamVector& phi0,
                                           std::uint64_t seed,
                                           const EnvOptions& env);

}  // namespace wr2l
