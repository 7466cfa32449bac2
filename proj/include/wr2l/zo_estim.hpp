#pragma once

#include "wr2l/common.hpp"
#include "wr2l/envs.hpp"
#include "wr2l/param_vector.hpp"
#include "wr2l/policy.hpp"
#include "wr2l/wasserstein.hpp"

#include <filesystem>
#include <functional>

namespace wr2l {

struct ZOConfig {
  double sigma = 0.05;
  int n_samples = 64;
  // ±ξ pairs; n_samples then counts function evaluations (2 per pair).
  bool antithetic = true;
  std::uint64_t seed = 0;
  // Redraws allowed per perturbation when φ ± ξ leaves the bounds.
  int max_resamples = 100;
  int jobs = 1;

  void validate() const;
};

struct GradEstimate {
  Vec grad;
  int n_used = 0;  // objective evaluations
  Vec std_error;   // per dimension
  int resampled = 0;
};

struct HessianEstimate {
  Mat matrix;  // symmetrized and eigenvalue-floored
  Mat raw;     // plain Monte-Carlo mean before any post-processing
  int n_used = 0;
  bool regularized = false;
  double min_eig_floor = 0.0;
  // Provenance, written to the cache header.
  double sigma = 0.0;
  int n_samples = 0;
  std::uint64_t seed = 0;
  Vec phi0;
};

// Stochastic objective. `stream` seeds any randomness the evaluation needs,
// so every call is reproducible from its perturbation index alone.
using ZOObjective =
    std::function<double(const ParamVector& phi, std::uint64_t stream)>;

// Gaussian-smoothing gradient (1/σ²N) Σ ξ_i f(φ + ξ_i), or the antithetic
// form (1/2σ²N) Σ ξ_i (f(φ + ξ_i) − f(φ − ξ_i)).
GradEstimate estimate_gradient(const ZOObjective& f, const ParamVector& phi,
                               const ZOConfig& cfg);

// (1/σ²N) Σ f(φ0 + ξ_i) (ξ_i ξ_iᵀ/σ² − I), then symmetrized and floored.
// The antithetic form averages f(φ0 ± ξ_i) for each draw.
HessianEstimate estimate_hessian(const ZOObjective& f, const ParamVector& phi0,
                                 const ZOConfig& cfg);

// Symmetrize, then raise eigenvalues to 1e-3 · max(1, λ_max).
void regularize_hessian(HessianEstimate& est);

// ∇_φ of the policy's expected return, each perturbation evaluated by
// `episodes` fresh episodes.
GradEstimate estimate_return_gradient(const Policy& policy, EnvFamily family,
                                      const ParamVector& phi,
                                      const ZOConfig& cfg, int episodes,
                                      const EnvOptions& options = {});

// Hessian at φ0 of W̄(φ) = expected_w2(bucket, φ, φ0).
HessianEstimate estimate_w2_hessian(const StateActionBucket& bucket,
                                    const ParamVector& phi0,
                                    const ZOConfig& cfg, int n_next = 1);

struct FiniteDiff {
  Vec grad;
  Mat hessian;
};

// Central-difference gradient and Hessian with step h.
FiniteDiff finite_diff_oracle(
    const std::function<double(const ParamVector&)>& f, const ParamVector& phi,
    double h);

// Solves H x = g. Dense Cholesky by default; conjugate gradients touch H
// only through products.
enum class SolveMethod { kDense, kConjugateGradient };
Vec solve_spd(const Mat& h, const Vec& g,
              SolveMethod method = SolveMethod::kDense);

void save_hessian(const HessianEstimate& est, const std::filesystem::path& path);
HessianEstimate load_hessian(const std::filesystem::path& path);

}  // namespace wr2l
