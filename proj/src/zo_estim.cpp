#include "wr2l/zo_estim.hpp"

#include "wr2l/binary_io.hpp"

#include <cmath>
#include <sstream>

namespace wr2l {

namespace {

struct Draw {
  Vec xi;
  int resamples = 0;
};

// ξ for perturbation `index`, redrawn from the same stream until φ + ξ (and
// φ − ξ when both signs are used) is physically valid.
Draw draw_perturbation(const ParamVector& phi, const ZOConfig& cfg,
                       std::size_t index, bool both_signs) {
  Rng rng(stream_seed(cfg.seed, index));
  Draw d;
  for (;;) {
    d.xi = rng.normal_vec(phi.dim(), cfg.sigma);
    const bool plus = phi.with_values(phi.values() + d.xi).is_valid();
    const bool minus =
        !both_signs || phi.with_values(phi.values() - d.xi).is_valid();
    if (plus && minus) return d;
    if (++d.resamples > cfg.max_resamples) {
      std::ostringstream msg;
      msg << "perturbation " << index << " left the parameter bounds "
          << d.resamples << " times (sigma " << cfg.sigma
          << " too large for the box?)";
      throw NumericalError(msg.str());
    }
  }
}

int pair_count(const ZOConfig& cfg) {
  return cfg.antithetic ? cfg.n_samples / 2 : cfg.n_samples;
}

double checked(double value, std::size_t index) {
  if (!std::isfinite(value)) {
    throw NumericalError("objective returned a non-finite value at perturbation " +
                         std::to_string(index));
  }
  return value;
}

}  // namespace

void ZOConfig::validate() const {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw InvalidArgument("zo config: sigma must be finite and > 0");
  }
  if (n_samples < 1) throw InvalidArgument("zo config: n_samples must be >= 1");
  if (antithetic && n_samples < 2) {
    throw InvalidArgument("zo config: antithetic sampling needs n_samples >= 2");
  }
  if (max_resamples < 0) {
    throw InvalidArgument("zo config: max_resamples must be >= 0");
  }
}

GradEstimate estimate_gradient(const ZOObjective& f, const ParamVector& phi,
                               const ZOConfig& cfg) {
  cfg.validate();
  const int p = pair_count(cfg);
  const Eigen::Index d = phi.dim();
  const double s2 = cfg.sigma * cfg.sigma;
  Mat contrib(d, p);
  std::vector<int> redraws(static_cast<std::size_t>(p), 0);

  parallel_for(static_cast<std::size_t>(p), cfg.jobs, [&](std::size_t i) {
    const Draw draw = draw_perturbation(phi, cfg, i, cfg.antithetic);
    redraws[i] = draw.resamples;
    const ParamVector plus = phi.with_values(phi.values() + draw.xi);
    const double fp = checked(f(plus, stream_seed(cfg.seed, i, 1)), i);
    if (cfg.antithetic) {
      const ParamVector minus = phi.with_values(phi.values() - draw.xi);
      const double fm = checked(f(minus, stream_seed(cfg.seed, i, 2)), i);
      contrib.col(static_cast<Eigen::Index>(i)) = draw.xi * ((fp - fm) / (2.0 * s2));
    } else {
      contrib.col(static_cast<Eigen::Index>(i)) = draw.xi * (fp / s2);
    }
  });

  GradEstimate est;
  est.grad = contrib.rowwise().mean();
  est.n_used = cfg.antithetic ? 2 * p : p;
  for (int r : redraws) est.resampled += r;
  if (p > 1) {
    const Mat centered = contrib.colwise() - est.grad;
    const Vec var = centered.rowwise().squaredNorm() / static_cast<double>(p - 1);
    est.std_error = (var / static_cast<double>(p)).cwiseSqrt();
  } else {
    // A single draw carries no spread information; report its magnitude.
    est.std_error = contrib.col(0).cwiseAbs();
  }
  return est;
}

HessianEstimate estimate_hessian(const ZOObjective& f, const ParamVector& phi0,
                                 const ZOConfig& cfg) {
  cfg.validate();
  const int p = pair_count(cfg);
  const Eigen::Index d = phi0.dim();
  const double s2 = cfg.sigma * cfg.sigma;
  // Per-draw (f, ξ) pairs; the d×d outer products are formed in the
  // ordered reduction below.
  Mat xis(d, p);
  Vec values(p);

  parallel_for(static_cast<std::size_t>(p), cfg.jobs, [&](std::size_t i) {
    const Draw draw = draw_perturbation(phi0, cfg, i, cfg.antithetic);
    const auto col = static_cast<Eigen::Index>(i);
    xis.col(col) = draw.xi;
    const ParamVector plus = phi0.with_values(phi0.values() + draw.xi);
    double value = checked(f(plus, stream_seed(cfg.seed, i, 1)), i);
    if (cfg.antithetic) {
      const ParamVector minus = phi0.with_values(phi0.values() - draw.xi);
      value = 0.5 * (value + checked(f(minus, stream_seed(cfg.seed, i, 2)), i));
    }
    values[col] = value;
  });

  // Σ f ξξᵀ/σ⁴ − Σ f I/σ², accumulated in index order.
  const Mat weighted = xis * values.asDiagonal();
  Mat sum = weighted * xis.transpose() / (s2 * s2);
  sum.diagonal().array() -= values.sum() / s2;

  HessianEstimate est;
  est.raw = sum / static_cast<double>(p);
  est.n_used = cfg.antithetic ? 2 * p : p;
  est.sigma = cfg.sigma;
  est.n_samples = cfg.n_samples;
  est.seed = cfg.seed;
  est.phi0 = phi0.values();
  regularize_hessian(est);
  return est;
}

void regularize_hessian(HessianEstimate& est) {
  const Mat sym = 0.5 * (est.raw + est.raw.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> eig(sym);
  if (eig.info() != Eigen::Success || !sym.allFinite()) {
    throw NumericalError("Hessian estimate is not a finite symmetric matrix");
  }
  const Vec lam = eig.eigenvalues();
  est.min_eig_floor = 1e-3 * std::max(1.0, lam.maxCoeff());
  est.regularized = lam.minCoeff() < est.min_eig_floor;
  if (!est.regularized) {
    est.matrix = sym;
    return;
  }
  const Vec floored = lam.cwiseMax(est.min_eig_floor);
  const Mat& v = eig.eigenvectors();
  const Mat m = v * floored.asDiagonal() * v.transpose();
  est.matrix = 0.5 * (m + m.transpose());
}

GradEstimate estimate_return_gradient(const Policy& policy, EnvFamily family,
                                      const ParamVector& phi,
                                      const ZOConfig& cfg, int episodes,
                                      const EnvOptions& options) {
  if (episodes < 1) {
    throw InvalidArgument("estimate_return_gradient: need >= 1 episode per perturbation");
  }
  const ZOObjective objective = [&](const ParamVector& p, std::uint64_t stream) {
    EnvHandle env = make_env(family, p, stream_seed(stream, 0), options);
    Rng rng(stream_seed(stream, 1));
    return mean_return(policy, *env, episodes, rng);
  };
  return estimate_gradient(objective, phi, cfg);
}

HessianEstimate estimate_w2_hessian(const StateActionBucket& bucket,
                                    const ParamVector& phi0,
                                    const ZOConfig& cfg, int n_next) {
  if (bucket.pairs.empty()) throw InvalidArgument("empty state-action bucket");
  if (bucket.env_options.noise_std == 0.0 &&
      expected_w2(bucket, phi0, phi0) != 0.0) {
    throw InvalidArgument("bucket was not built at phi0");
  }
  const ZOObjective objective = [&](const ParamVector& p, std::uint64_t stream) {
    ExpectedW2Options o;
    o.n_next = n_next;
    o.seed = stream;
    o.jobs = 1;
    return expected_w2(bucket, p, phi0, o);
  };
  return estimate_hessian(objective, phi0, cfg);
}

FiniteDiff finite_diff_oracle(
    const std::function<double(const ParamVector&)>& f, const ParamVector& phi,
    double h) {
  if (!(h > 0.0)) throw InvalidArgument("finite_diff_oracle: h must be > 0");
  const Eigen::Index d = phi.dim();
  auto at = [&](const Vec& delta) {
    return f(phi.with_values(phi.values() + delta));
  };
  FiniteDiff out;
  out.grad.resize(d);
  out.hessian.resize(d, d);
  const double f0 = at(Vec::Zero(d));
  for (Eigen::Index k = 0; k < d; ++k) {
    const Vec ek = Vec::Unit(d, k) * h;
    const double fp = at(ek), fm = at(-ek);
    out.grad[k] = (fp - fm) / (2.0 * h);
    out.hessian(k, k) = (fp - 2.0 * f0 + fm) / (h * h);
    for (Eigen::Index l = 0; l < k; ++l) {
      const Vec el = Vec::Unit(d, l) * h;
      const double v = (at(ek + el) - at(ek - el) - at(el - ek) + at(-ek - el)) /
                       (4.0 * h * h);
      out.hessian(k, l) = v;
      out.hessian(l, k) = v;
    }
  }
  return out;
}

Vec solve_spd(const Mat& h, const Vec& g, SolveMethod method) {
  if (h.rows() != h.cols() || h.rows() != g.size()) {
    throw DimensionMismatch("solve_spd: shapes do not match");
  }
  if (method == SolveMethod::kDense) {
    Eigen::LLT<Mat> llt(h);
    if (llt.info() != Eigen::Success) {
      throw NumericalError("Hessian is not positive definite");
    }
    return llt.solve(g);
  }
  // Plain conjugate gradients; exact in at most dim steps in exact arithmetic.
  Vec x = Vec::Zero(g.size());
  Vec r = g;
  Vec p = r;
  double rr = r.squaredNorm();
  const double stop = 1e-28 * std::max(1.0, g.squaredNorm());
  for (Eigen::Index it = 0; it < 10 * g.size() && rr > stop; ++it) {
    const Vec hp = h * p;
    const double curv = p.dot(hp);
    if (!(curv > 0.0)) throw NumericalError("Hessian is not positive definite");
    const double alpha = rr / curv;
    x += alpha * p;
    r -= alpha * hp;
    const double rr_next = r.squaredNorm();
    p = r + (rr_next / rr) * p;
    rr = rr_next;
  }
  return x;
}

namespace {
constexpr std::string_view kHessianMagic = "WR2L_HES";
constexpr std::uint32_t kHessianVersion = 1;
}  // namespace

void save_hessian(const HessianEstimate& est, const std::filesystem::path& path) {
  io::Writer w;
  w.put<std::int32_t>(static_cast<std::int32_t>(est.matrix.rows()));
  w.put<double>(est.sigma);
  w.put<std::int64_t>(est.n_samples);
  w.put<std::uint64_t>(est.seed);
  w.put<double>(est.min_eig_floor);
  w.put<std::uint8_t>(est.regularized ? 1 : 0);
  w.put<std::int64_t>(est.n_used);
  w.put_vec(est.phi0);
  w.put_mat(est.matrix);
  w.put_mat(est.raw);
  w.write_file(path, kHessianMagic, kHessianVersion);
}

HessianEstimate load_hessian(const std::filesystem::path& path) {
  io::Reader r = [&] {
    try {
      return io::Reader::open(path, kHessianMagic, kHessianVersion);
    } catch (const io::FormatError& e) {
      throw io::FormatError(std::string(e.what()) +
                            "; re-run estimate-hessian to rebuild the cache");
    }
  }();
  HessianEstimate est;
  const int d = r.get<std::int32_t>();
  est.sigma = r.get<double>();
  est.n_samples = static_cast<int>(r.get<std::int64_t>());
  est.seed = r.get<std::uint64_t>();
  est.min_eig_floor = r.get<double>();
  est.regularized = r.get<std::uint8_t>() != 0;
  est.n_used = static_cast<int>(r.get<std::int64_t>());
  est.phi0 = r.get_vec();
  est.matrix = r.get_mat();
  est.raw = r.get_mat();
  if (est.matrix.rows() != d || est.matrix.cols() != d ||
      est.raw.rows() != d || est.phi0.size() != d || !r.at_end()) {
    throw io::FormatError("Hessian cache '" + path.string() +
                          "' does not match its header");
  }
  return est;
}

}  // namespace wr2l
