#include "wr2l/selftest.hpp"

#include "wr2l/wasserstein.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

namespace wr2l {

namespace {

std::string fmt(double x) {
  std::ostringstream os;
  os.precision(3);
  os << x;
  return os.str();
}

// Analytic clipped-surrogate gradient against central differences on a
// 4-unit network with 10 transitions.
SelftestCase ppo_gradient(const SelftestOptions&) {
  SelftestCase c;
  double worst = 0.0;
  for (ActionType type : {ActionType::kDiscrete, ActionType::kContinuous}) {
    EnvSpec spec;
    spec.state_dim = 3;
    spec.action_type = type;
    spec.action_dim = type == ActionType::kDiscrete ? 3 : 2;
    const Policy old = Policy::init(spec, 7, 4, -0.3);
    Rng rng(17);
    RolloutBatch b;
    b.states.resize(3, 10);
    b.log_probs.resize(10);
    b.advantages.resize(10);
    b.rewards = Vec::Zero(10);
    for (int t = 0; t < 10; ++t) {
      const Vec s = rng.normal_vec(3);
      b.states.col(t) = s;
      const ActionSample a = sample_action(old, s, rng);
      b.actions.push_back(a.action);
      b.log_probs[t] = a.log_prob;
      b.advantages[t] = rng.normal();
    }
    Policy cur = old;
    Vec theta = cur.policy_params() + rng.normal_vec(cur.policy_params().size(), 0.02);
    cur.set_policy_params(theta);
    std::vector<int> idx(10);
    std::iota(idx.begin(), idx.end(), 0);
    const Vec g = clipped_surrogate(cur, b, idx, 0.2, 0.0).grad;
    Vec fd(theta.size());
    const double h = 1e-6;
    for (Eigen::Index k = 0; k < theta.size(); ++k) {
      Policy p = cur, m = cur;
      Vec tp = theta, tm = theta;
      tp[k] += h;
      tm[k] -= h;
      p.set_policy_params(tp);
      m.set_policy_params(tm);
      fd[k] = (clipped_surrogate(p, b, idx, 0.2, 0.0).value -
               clipped_surrogate(m, b, idx, 0.2, 0.0).value) /
              (2.0 * h);
    }
    worst = std::max(worst, (g - fd).norm() / fd.norm());
  }
  c.passed = worst < 1e-4;
  c.detail = "relative error " + fmt(worst) + " (limit 1e-4)";
  return c;
}

// Zero-order gradient of J(φ) = 10 − ½ φᵀ diag(1..5) φ + bᵀφ at a fixed
// point against the analytic gradient.
SelftestCase zo_gradient(const SelftestOptions& o) {
  SelftestCase c;
  Vec diag(5), b(5);
  diag << 1, 2, 3, 4, 5;
  b << 1, -1, 0.5, 2, -0.5;
  const ZOObjective f = [&](const ParamVector& p, std::uint64_t) {
    const Vec& x = p.values();
    return 10.0 - 0.5 * x.dot(diag.asDiagonal() * x) + b.dot(x);
  };
  const ParamVector phi = ParamVector::from_values(Vec::Constant(5, 0.2));
  ZOConfig cfg;
  cfg.n_samples = o.quick ? 10000 : 50000;
  cfg.sigma = 0.05;
  cfg.seed = 3;
  const Vec truth = b - diag.asDiagonal() * phi.values();
  const double err =
      (estimate_gradient(f, phi, cfg).grad - truth).norm() / truth.norm();
  const double limit = o.quick ? 0.1 : 0.05;
  c.passed = err < limit;
  c.detail = "relative error " + fmt(err) + " (limit " + fmt(limit) + ")";
  return c;
}

// Zero-order Hessian of ½ φᵀ diag(1, 4) φ against the central-difference
// oracle.
SelftestCase zo_hessian(const SelftestOptions& o) {
  SelftestCase c;
  const Mat m = Eigen::Vector2d(1.0, 4.0).asDiagonal();
  const ZOObjective f = [&](const ParamVector& p, std::uint64_t) {
    return 0.5 * p.values().dot(m * p.values());
  };
  const ParamVector phi0 = ParamVector::from_values(Vec::Zero(2));
  ZOConfig cfg;
  cfg.sigma = 0.1;
  cfg.n_samples = o.quick ? 100000 : 200000;
  cfg.seed = 5;
  const HessianEstimate h = estimate_hessian(f, phi0, cfg);
  const FiniteDiff fd = finite_diff_oracle(
      [&](const ParamVector& p) { return f(p, 0); }, phi0, 1e-3);
  double worst = 0.0;
  for (int i = 0; i < 2; ++i) {
    worst = std::max(worst, std::abs(h.matrix(i, i) - fd.hessian(i, i)) /
                                fd.hessian(i, i));
  }
  const double off = std::abs(h.matrix(0, 1));
  const double limit = o.quick ? 0.2 : 0.1;
  c.passed = worst < limit && off < 0.2;
  c.detail = "diagonal rel. error " + fmt(worst) + ", off-diagonal " + fmt(off);
  return c;
}

SelftestCase ot_bruteforce(const SelftestOptions& o) {
  SelftestCase c;
  Rng rng(23);
  const int cases = o.quick ? 40 : 200;
  double worst = 0.0;
  for (int t = 0; t < cases; ++t) {
    const int n = rng.uniform_int(1, 6);
    const int d = rng.uniform_int(1, 3);
    std::vector<Vec> xs, ys;
    for (int i = 0; i < n; ++i) {
      xs.push_back(rng.normal_vec(d));
      ys.push_back(rng.normal_vec(d));
    }
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
      double s = 0.0;
      for (int i = 0; i < n; ++i) {
        s += (xs[static_cast<std::size_t>(i)] -
              ys[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])])
                 .squaredNorm();
      }
      best = std::min(best, s / n);
    } while (std::next_permutation(perm.begin(), perm.end()));
    const double got = w2_squared_empirical(EmpiricalDist(xs), EmpiricalDist(ys));
    worst = std::max(worst, std::abs(got - best));
  }
  c.passed = worst <= 1e-10;
  c.detail = std::to_string(cases) + " instances, max gap " + fmt(worst);
  return c;
}

SelftestCase ot_1d(const SelftestOptions& o) {
  SelftestCase c;
  Rng rng(29);
  const int cases = o.quick ? 40 : 200;
  int mismatches = 0;
  for (int t = 0; t < cases; ++t) {
    const int n = rng.uniform_int(1, 40);
    std::vector<double> a, b;
    for (int i = 0; i < n; ++i) {
      a.push_back(rng.normal());
      b.push_back(2.0 * rng.normal() + 0.5);
    }
    const auto mu = EmpiricalDist::from_scalars(a);
    const auto nu = EmpiricalDist::from_scalars(b);
    mismatches += w2_squared_1d(mu, nu) != w2_squared_empirical(mu, nu);
  }
  c.passed = mismatches == 0;
  c.detail = std::to_string(mismatches) + " of " + std::to_string(cases) +
             " instances differ";
  return c;
}

SelftestCase closed_form_kkt(const SelftestOptions& o) {
  SelftestCase c;
  const ClosedFormFn solve =
      o.closed_form ? o.closed_form
                    : [](const Vec& g, const Mat& h, const ParamVector& p, double e) {
                        return closed_form_minimizer(g, h, p, e);
                      };
  Rng rng(31);
  const int cases = o.quick ? 20 : 100;
  const int samples = o.quick ? 1000 : 10000;
  int failures = 0;
  double worst_boundary = 0.0, worst_stationarity = 0.0;
  for (int t = 0; t < cases; ++t) {
    const int d = rng.uniform_int(1, 10);
    Mat a(d, d);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
    const Mat h = a * a.transpose() + 0.1 * Mat::Identity(d, d);
    const Vec g = rng.normal_vec(d);
    const Vec center = rng.normal_vec(d);
    const double eps = 0.01 + 2.0 * rng.uniform();
    const ParamVector phi0 = ParamVector::from_values(center);
    const ClosedForm cf = solve(g, h, phi0, eps);
    const Vec step = cf.phi.values() - center;
    const double boundary = std::abs(0.5 * step.dot(h * step) - eps) / eps;
    // λ comes from g and H alone, so a wrong step cannot hide behind the
    // multiplier the solver reports.
    const double lambda = std::sqrt(g.dot(h.llt().solve(g)) / (2.0 * eps));
    const double stationarity = (g + lambda * (h * step)).norm() / g.norm();
    worst_boundary = std::max(worst_boundary, boundary);
    worst_stationarity = std::max(worst_stationarity, stationarity);
    bool beaten = false;
    const Eigen::LLT<Mat> llt(h);
    const double best = g.dot(cf.phi.values());
    for (int s = 0; s < samples && !beaten; ++s) {
      Vec u = rng.normal_vec(d);
      u /= u.norm();
      const Vec p = center + std::sqrt(2.0 * eps) * llt.matrixU().solve(u);
      beaten = g.dot(p) < best - 1e-10 * (1.0 + std::abs(best));
    }
    failures += boundary > 1e-8 || stationarity > 1e-8 || beaten;
  }
  c.passed = failures == 0;
  c.detail = std::to_string(failures) + " of " + std::to_string(cases) +
             " cases fail; boundary " + fmt(worst_boundary) + ", stationarity " +
             fmt(worst_stationarity);
  return c;
}

SelftestCase line_search_unit_step(const SelftestOptions&) {
  SelftestCase c;
  const auto f = [](double a) {
    return LinePoint{-a + 0.25 * a * a, -1.0 + 0.5 * a};
  };
  const LineSearchResult r = wolfe_line_search(f, f(0.0), WolfeParams{});
  c.passed = r.alpha == 1.0 && r.status == LineSearchStatus::kWolfe;
  c.detail = "alpha " + fmt(r.alpha);
  return c;
}

}  // namespace

std::vector<SelftestCase> run_selftest(const SelftestOptions& options) {
  using Check = SelftestCase (*)(const SelftestOptions&);
  const std::pair<const char*, Check> checks[] = {
      {"ppo_surrogate_gradient", ppo_gradient},
      {"zo_gradient_quadratic", zo_gradient},
      {"zo_hessian_vs_finite_difference", zo_hessian},
      {"ot_vs_brute_force", ot_bruteforce},
      {"ot_1d_fast_path", ot_1d},
      {"closed_form_kkt_fuzz", closed_form_kkt},
      {"wolfe_unit_step", line_search_unit_step}};
  std::vector<SelftestCase> out;
  for (const auto& [name, check] : checks) {
    const auto start = std::chrono::steady_clock::now();
    SelftestCase c;
    try {
      c = check(options);
    } catch (const std::exception& e) {
      c.passed = false;
      c.detail = std::string("threw: ") + e.what();
    }
    c.name = name;
    c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                    .count();
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace wr2l
