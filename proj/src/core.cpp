#include "wr2l/core.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace wr2l {

namespace {

// Stream indices under the run seed. Phase I and Phase II never share a
// stream, so the policy path is unaffected by how much Phase I samples.
enum Stream : std::uint64_t {
  kPolicyInit = 1,
  kRollout = 2,
  kShuffle = 3,
  kEnv = 4,
  kPhaseOne = 5,
  kBucket = 6,
  kHessian = 7,
};

constexpr double kConstraintSlack = 1e-6;
// Phase I stays this many smoothing widths inside the physical box, so
// antithetic perturbations around an iterate still fit.
constexpr double kBoxMarginSigmas = 1.0;

[[noreturn]] void config_error(const std::string& what) {
  throw InvalidArgument("wr2l config: " + what);
}

// Bounds of dimension i pulled in by margin, never past the midpoint.
Bounds inner_bounds(const ParamVector& x, Eigen::Index i, double margin) {
  const Bounds& b = x.bounds()[static_cast<std::size_t>(i)];
  const double m = std::min(margin, 0.25 * (b.hi - b.lo));
  return {b.lo + m, b.hi - m};
}

// Largest t in [0, 1] keeping x + t p inside the physical box of x, shrunk
// by margin on every side.
double box_step_limit(const ParamVector& x, const Vec& p, double margin) {
  if (!x.has_bounds()) return 1.0;
  double t = 1.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const Bounds b = inner_bounds(x, i, margin);
    if (p[i] > 0.0) t = std::min(t, (b.hi - x[i]) / p[i]);
    if (p[i] < 0.0) t = std::min(t, (b.lo - x[i]) / p[i]);
  }
  return std::max(0.0, t);
}

// x + alpha p can overshoot a face by an ulp after box_step_limit; pin it back.
ParamVector clamp_to_box(const ParamVector& x) {
  if (!x.has_bounds()) return x;
  Vec v = x.values();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const Bounds& b = x.bounds()[static_cast<std::size_t>(i)];
    v[i] = std::clamp(v[i], b.lo, b.hi);
  }
  return x.with_values(std::move(v));
}

}  // namespace

void WolfeParams::validate() const {
  if (!(c1 > 0.0 && c1 < c2 && c2 < 1.0)) config_error("need 0 < c1 < c2 < 1");
  if (!(alpha_init > 0.0 && alpha_init <= 1.0)) {
    config_error("alpha_init must be in (0, 1]");
  }
  if (!(alpha_min > 0.0 && alpha_min <= alpha_init)) {
    config_error("alpha_min must be in (0, alpha_init]");
  }
  if (max_backtracks < 0) config_error("max_backtracks must be >= 0");
}

void WR2LConfig::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) {
    config_error("epsilon must be finite and >= 0");
  }
  if (inner_max_iters < 0) config_error("inner_max_iters must be >= 0");
  if (!(inner_grad_tol >= 0.0)) config_error("inner_grad_tol must be >= 0");
  if (outer_iters < 1) config_error("outer_iters must be >= 1");
  if (zo_episodes < 1 || line_search_episodes < 1) {
    config_error("episode budgets must be >= 1");
  }
  if (bucket_pairs < 1) config_error("bucket_pairs must be >= 1");
  if (n_next < 1) config_error("n_next must be >= 1");
  line_search.validate();
  zo.validate();
  hessian_zo.validate();
  ppo.validate();
}

// ---------------------------------------------------------------------------
// Closed form and line search

ClosedForm closed_form_minimizer(const Vec& g, const Mat& h0,
                                 const ParamVector& phi0, double epsilon,
                                 SolveMethod method) {
  if (g.size() != phi0.dim() || h0.rows() != phi0.dim() ||
      h0.cols() != phi0.dim()) {
    throw DimensionMismatch("closed_form_minimizer: shapes do not match");
  }
  if (!(epsilon >= 0.0)) throw InvalidArgument("epsilon must be >= 0");
  if (!g.allFinite()) throw NumericalError("gradient is not finite");
  if (g.isZero(0.0)) {
    throw InvalidArgument("zero gradient: the inner loop has converged");
  }
  const Vec hinv_g = solve_spd(h0, g, method);
  const double q = g.dot(hinv_g);
  if (!(q > 0.0)) throw NumericalError("Hessian is not positive definite");
  ClosedForm out;
  const double scale = std::sqrt(2.0 * epsilon / q);
  out.step = -scale * hinv_g;
  out.phi = phi0.with_values(phi0.values() + out.step);
  out.lambda = epsilon > 0.0 ? std::sqrt(q / (2.0 * epsilon))
                             : std::numeric_limits<double>::infinity();
  out.stationarity =
      epsilon > 0.0 ? (g + out.lambda * (h0 * out.step)).norm() : 0.0;
  return out;
}

LineSearchResult wolfe_line_search(
    const std::function<LinePoint(double)>& fn, const LinePoint& at_zero,
    const WolfeParams& params) {
  LineSearchResult res;
  res.point = at_zero;
  if (!(at_zero.slope < 0.0)) {
    res.status = LineSearchStatus::kNotDescent;
    return res;
  }
  const double f0 = at_zero.value, d0 = at_zero.slope;
  double lo = 0.0, hi = std::numeric_limits<double>::infinity();
  LinePoint at_lo = at_zero, at_hi;
  double alpha = params.alpha_init;
  for (int it = 0; it <= params.max_backtracks; ++it) {
    const LinePoint pt = fn(alpha);
    ++res.evaluations;
    if (!std::isfinite(pt.value) || pt.value > f0 + params.c1 * alpha * d0) {
      hi = alpha;
      at_hi = pt;
    } else if (pt.slope < params.c2 * d0) {
      if (alpha >= 1.0) {
        res.alpha = alpha;
        res.point = pt;
        res.status = LineSearchStatus::kBoundary;
        return res;
      }
      lo = alpha;
      at_lo = pt;
    } else {
      res.alpha = alpha;
      res.point = pt;
      res.status = LineSearchStatus::kWolfe;
      return res;
    }
    if (!std::isfinite(hi)) {
      alpha = std::min(2.0 * alpha, 1.0);
      continue;
    }
    // Minimizer of the quadratic through (lo, f, f') and (hi, f), kept away
    // from the bracket ends; plain bisection when the fit is unusable.
    const double w = hi - lo;
    double next = 0.5 * (lo + hi);
    if (std::isfinite(at_hi.value)) {
      const double curv = (at_hi.value - at_lo.value - at_lo.slope * w) / (w * w);
      if (curv > 0.0) next = lo - at_lo.slope / (2.0 * curv);
    }
    alpha = std::clamp(next, lo + 0.1 * w, hi - 0.1 * w);
  }
  res.alpha = params.alpha_min;
  res.point = fn(params.alpha_min);
  ++res.evaluations;
  res.status = LineSearchStatus::kFallback;
  return res;
}

// ---------------------------------------------------------------------------
// Phase I objectives

AnalyticQuadObjective::AnalyticQuadObjective(const EnvOptions& options) {
  const int d = options.quad_dim;
  const Mat a = options.quad.curvature.size() == 0 ? Mat(Mat::Identity(d, d))
                                                   : options.quad.curvature;
  sym_ = 0.5 * (a + a.transpose());
  optimum_ = options.quad.optimum.size() == 0 ? Vec(Vec::Ones(d))
                                              : options.quad.optimum;
  offset_ = options.quad.offset;
}

double AnalyticQuadObjective::value(const Vec& phi) const {
  const Vec d = phi - optimum_;
  return offset_ - 0.5 * d.dot(sym_ * d);
}

GradEstimate AnalyticQuadObjective::gradient(const ParamVector& x,
                                             std::uint64_t) {
  GradEstimate g;
  g.grad = -sym_ * (x.values() - optimum_);
  g.std_error = Vec::Zero(g.grad.size());
  g.n_used = 1;
  return g;
}

LinePoint AnalyticQuadObjective::along(const ParamVector& x, const Vec& p,
                                       double alpha, std::uint64_t) {
  const Vec phi = x.values() + alpha * p;
  return {value(phi), (-sym_ * (phi - optimum_)).dot(p)};
}

RolloutObjective::RolloutObjective(const Policy& policy, EnvFamily family,
                                   const EnvOptions& options,
                                   const WR2LConfig& cfg)
    : policy_(policy), family_(family), options_(options), cfg_(cfg) {}

GradEstimate RolloutObjective::gradient(const ParamVector& x,
                                        std::uint64_t stream) {
  ZOConfig zo = cfg_.zo;
  zo.seed = stream;
  zo.jobs = cfg_.jobs;
  return estimate_return_gradient(policy_, family_, x, zo, cfg_.zo_episodes,
                                  options_);
}

double RolloutObjective::evaluate(const ParamVector& phi,
                                  std::uint64_t stream) const {
  EnvHandle env = make_env(family_, phi, stream_seed(stream, 0), options_);
  Rng rng(stream_seed(stream, 1));
  return mean_return(policy_, *env, cfg_.line_search_episodes, rng);
}

LinePoint RolloutObjective::along(const ParamVector& x, const Vec& p,
                                  double alpha, std::uint64_t stream) {
  const double pn = p.norm();
  const ParamVector at = clamp_to_box(x.with_values(x.values() + alpha * p));
  if (pn == 0.0) return {evaluate(at, stream), 0.0};
  // Both evaluations share one stream (common random numbers), so their
  // difference reflects the dynamics change rather than sampling noise.
  const double delta = cfg_.zo.sigma / pn;
  ParamVector lo = x.with_values(x.values() + (alpha - delta) * p);
  ParamVector hi = x.with_values(x.values() + (alpha + delta) * p);
  double a_lo = alpha - delta, a_hi = alpha + delta;
  if (!lo.is_valid()) lo = at, a_lo = alpha;
  if (!hi.is_valid()) hi = at, a_hi = alpha;
  if (a_hi == a_lo) return {evaluate(at, stream), 0.0};
  double f_lo = 0.0, f_hi = 0.0;
  parallel_for(2, cfg_.jobs, [&](std::size_t i) {
    if (i == 0) f_lo = evaluate(lo, stream);
    else f_hi = evaluate(hi, stream);
  });
  const double slope = (f_hi - f_lo) / (a_hi - a_lo);
  const double value = f_lo + slope * (alpha - a_lo);
  return {value, slope};
}

// ---------------------------------------------------------------------------
// Inner loop

InnerStepResult inner_descent_step(const InnerState& state, const Vec& g,
                                   const Mat& h0, const ParamVector& phi0,
                                   double epsilon, const WolfeParams& wolfe,
                                   PhaseOneObjective& objective,
                                   std::uint64_t stream, double box_margin) {
  InnerStepResult out;
  out.state = state;
  if (g.isZero(0.0)) {
    out.converged = true;
    return out;
  }
  const ClosedForm target = closed_form_minimizer(g, h0, phi0, epsilon);
  Vec p = target.phi.values() - state.x.values();
  // The ellipsoid may reach past the physical box; stop at its face.
  p *= box_step_limit(state.x, p, box_margin);
  if (p.norm() <= 1e-14 * (1.0 + state.x.values().norm())) {
    out.converged = true;
    return out;
  }
  const auto line = [&](double alpha) {
    return objective.along(state.x, p, alpha, stream);
  };
  // The slope at the start comes from the same gradient estimate that chose
  // p. A local difference there reads zero on a saturated plateau even when
  // the smoothed objective clearly falls along p.
  LinePoint start = line(0.0);
  start.slope = g.dot(p);
  out.line_search = wolfe_line_search(line, start, wolfe);
  if (out.line_search.alpha > 0.0) {
    out.state.x = clamp_to_box(
        state.x.with_values(state.x.values() + out.line_search.alpha * p));
  }
  out.state.j = state.j + 1;
  out.state.constraint_value =
      ellipsoid_value(out.state.x.values(), phi0.values(), h0);
  return out;
}

InnerResult inner_loop(PhaseOneObjective& objective,
                       const ParamVector& phi_init, const Mat& h0,
                       const ParamVector& phi0, const WR2LConfig& cfg,
                       std::uint64_t stream) {
  require_same_dim(phi_init, phi0);
  InnerResult res;
  res.phi = phi_init;
  if (std::isinf(cfg.inner_grad_tol) || cfg.epsilon == 0.0) return res;

  InnerState state;
  state.x = phi_init;
  state.constraint_value = ellipsoid_value(phi_init.values(), phi0.values(), h0);
  double first_norm = -1.0;
  for (int j = 0; j < cfg.inner_max_iters; ++j) {
    state.last_grad = objective.gradient(state.x, stream_seed(stream, j, 0));
    const double gnorm = state.last_grad.grad.cwiseAbs().maxCoeff();
    if (first_norm < 0.0) first_norm = gnorm;
    const double threshold =
        cfg.inner_tol_relative ? cfg.inner_grad_tol * first_norm
                               : cfg.inner_grad_tol;
    if (gnorm == 0.0 || gnorm < threshold) break;
    InnerStepResult step =
        inner_descent_step(state, state.last_grad.grad, h0, phi0, cfg.epsilon,
                           cfg.line_search, objective, stream_seed(stream, j, 1),
                           kBoxMarginSigmas * cfg.zo.sigma);
    if (step.converged) break;
    ++res.iterations;
    if (step.line_search.status == LineSearchStatus::kFallback) {
      ++res.line_search_fallbacks;
    }
    state = std::move(step.state);
    res.objective_trace.push_back(step.line_search.point.value);
    res.constraint_trace.push_back(state.constraint_value);
  }
  res.phi = state.x;
  return res;
}

// ---------------------------------------------------------------------------
// Training

void TrainReport::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << std::setprecision(17);
  out << "# family=" << family << "\n# seed=" << seed
      << "\n# epsilon=" << epsilon << "\n";
  for (const std::string& n : notes) out << "# note=" << n << "\n";
  out << "k";
  for (const std::string& n : param_names) out << ",phi_" << n;
  out << ",return_mean,constraint,entropy,seconds,inner_iters,"
         "line_search_fallbacks,ppo_aborted\n";
  for (const TrainRow& r : rows) {
    out << r.k;
    for (Eigen::Index i = 0; i < r.phi.size(); ++i) out << "," << r.phi[i];
    out << "," << r.return_mean << "," << r.constraint << "," << r.entropy
        << "," << r.seconds << "," << r.inner_iterations << ","
        << r.line_search_fallbacks << "," << (r.ppo_aborted ? 1 : 0) << "\n";
  }
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

HessianEstimate estimate_reference_hessian(const WR2LConfig& cfg,
                                           EnvFamily family,
                                           const ParamVector& phi0,
                                           std::uint64_t seed,
                                           const EnvOptions& env) {
  const StateActionBucket bucket = build_bucket(
      family, phi0, cfg.bucket_pairs, stream_seed(seed, kBucket), env);
  ZOConfig zo = cfg.hessian_zo;
  zo.seed = stream_seed(seed, kHessian);
  zo.jobs = cfg.jobs;
  return estimate_w2_hessian(bucket, phi0, zo, cfg.n_next);
}

namespace {

struct PhaseTwo {
  EnvHandle env;
  Rng rollout_rng;
  Rng shuffle_rng;
  PPOOptimizer opt;
};

PhaseTwo make_phase_two(EnvFamily family, const ParamVector& phi0,
                        std::uint64_t seed, const EnvOptions& env) {
  return PhaseTwo{make_env(family, phi0, stream_seed(seed, kEnv), env),
                  Rng(stream_seed(seed, kRollout)),
                  Rng(stream_seed(seed, kShuffle)), PPOOptimizer{}};
}

// Rollouts under the environment's current φ, then one PPO update.
void phase_two_step(Policy& policy, PhaseTwo& p2, const PPOConfig& cfg,
                    TrainRow& row) {
  RolloutBatch batch =
      collect_rollouts(policy, *p2.env, cfg.rollout_transitions, p2.rollout_rng);
  finish_batch(batch, cfg.gamma, cfg.gae_lambda);
  const PPOStats stats = ppo_update(policy, batch, cfg, p2.opt, p2.shuffle_rng);
  row.ppo_aborted = stats.aborted;
  double total = 0.0;
  for (double r : batch.episode_returns) total += r;
  row.return_mean = total / static_cast<double>(batch.episode_returns.size());
  row.entropy = policy_entropy(policy, batch.states);
}

ParamVector resolve_phi0(EnvFamily family, const TrainOptions& options) {
  if (!options.phi0) return reference_params(family, options.env);
  ParamVector phi0 = family_params(family, options.phi0->values(), options.env);
  // A caller-supplied box (e.g. narrowed in the config) wins over the family's.
  if (options.phi0->has_bounds()) {
    phi0 = ParamVector(phi0.values(), phi0.names(), options.phi0->bounds());
  }
  phi0.validate();
  return phi0;
}

TrainReport empty_report(EnvFamily family, const ParamVector& phi0,
                         std::uint64_t seed, double epsilon) {
  TrainReport report;
  report.family = std::string(to_string(family));
  report.param_names = phi0.names();
  report.seed = seed;
  report.epsilon = epsilon;
  return report;
}

}  // namespace

TrainResult train(const WR2LConfig& cfg, EnvFamily family, std::uint64_t seed,
                  const TrainOptions& options) {
  cfg.validate();
  const ParamVector phi0 = resolve_phi0(family, options);
  TrainResult result;
  result.report = empty_report(family, phi0, seed, cfg.epsilon);
  PhaseTwo p2 = make_phase_two(family, phi0, seed, options.env);
  result.policy = Policy::init(p2.env->spec(), stream_seed(seed, kPolicyInit),
                               cfg.ppo.hidden, cfg.ppo.init_log_std);
  result.phi = phi0;

  // ε = 0 pins φ at φ0, so neither the Hessian nor Phase I is needed.
  const bool robust = cfg.epsilon > 0.0;
  if (robust) {
    result.h0 = options.h0 ? *options.h0
                           : estimate_reference_hessian(cfg, family, phi0, seed,
                                                        options.env);
    if (result.h0->matrix.rows() != phi0.dim()) {
      throw DimensionMismatch("cached Hessian does not match the family");
    }
  }

  for (int k = 0; k < cfg.outer_iters; ++k) {
    const auto start = std::chrono::steady_clock::now();
    TrainRow row;
    row.k = k;
    if (robust) {
      RolloutObjective objective(result.policy, family, options.env, cfg);
      const ParamVector init = cfg.reset_inner ? phi0 : result.phi;
      const InnerResult inner =
          inner_loop(objective, init, result.h0->matrix, phi0, cfg,
                     stream_seed(seed, kPhaseOne, static_cast<std::uint64_t>(k)));
      result.phi = inner.phi;
      row.inner_iterations = inner.iterations;
      row.line_search_fallbacks = inner.line_search_fallbacks;
      row.constraint = ellipsoid_value(result.phi.values(), phi0.values(),
                                       result.h0->matrix);
      if (row.constraint > cfg.epsilon + kConstraintSlack) {
        throw NumericalError("Phase I left the Wasserstein ball (constraint " +
                             std::to_string(row.constraint) + ")");
      }
    }
    row.phi = result.phi.values();
    p2.env->set_params(result.phi);
    phase_two_step(result.policy, p2, cfg.ppo, row);
    row.seconds = std::chrono::duration<double>(
                      std::chrono::steady_clock::now() - start)
                      .count();
    result.report.rows.push_back(row);
    if (options.on_iteration) options.on_iteration(row);
    if (row.entropy < cfg.ppo.entropy_stop_threshold) {
      result.report.notes.push_back("entropy below threshold after iteration " +
                                    std::to_string(k));
      break;
    }
  }
  return result;
}

TrainResult train_ppo(const PPOConfig& cfg, int outer_iters, EnvFamily family,
                      std::uint64_t seed, const TrainOptions& options) {
  cfg.validate();
  if (outer_iters < 1) throw InvalidArgument("outer_iters must be >= 1");
  const ParamVector phi0 = resolve_phi0(family, options);
  TrainResult result;
  result.report = empty_report(family, phi0, seed, 0.0);
  PhaseTwo p2 = make_phase_two(family, phi0, seed, options.env);
  result.policy = Policy::init(p2.env->spec(), stream_seed(seed, kPolicyInit),
                               cfg.hidden, cfg.init_log_std);
  result.phi = phi0;
  for (int k = 0; k < outer_iters; ++k) {
    const auto start = std::chrono::steady_clock::now();
    TrainRow row;
    row.k = k;
    row.phi = phi0.values();
    phase_two_step(result.policy, p2, cfg, row);
    row.seconds = std::chrono::duration<double>(
                      std::chrono::steady_clock::now() - start)
                      .count();
    result.report.rows.push_back(row);
    if (options.on_iteration) options.on_iteration(row);
    if (row.entropy < cfg.entropy_stop_threshold) break;
  }
  return result;
}

}  // namespace wr2l
