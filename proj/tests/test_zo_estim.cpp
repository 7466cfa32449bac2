#include "wr2l/zo_estim.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

namespace wr2l {
namespace {

EnvOptions quad_options(int dim) {
  EnvOptions o;
  o.quad_dim = dim;
  Vec diag(dim);
  for (int i = 0; i < dim; ++i) diag[i] = 1.0 + i;
  o.quad.curvature = diag.asDiagonal();
  o.quad.optimum = Vec::Ones(dim);
  return o;
}

// J(φ) on the testbed as a direct objective (no rollouts).
ZOObjective quad_return(const EnvOptions& o) {
  return [o](const ParamVector& p, std::uint64_t) {
    const Vec d = p.values() - o.quad.optimum;
    return o.quad.offset - 0.5 * d.dot(o.quad.curvature * d);
  };
}

TEST(ZOConfig, Validation) {
  ZOConfig c;
  EXPECT_NO_THROW(c.validate());
  c.sigma = 0.0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = ZOConfig{};
  c.n_samples = 1;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c.antithetic = false;
  EXPECT_NO_THROW(c.validate());
}

TEST(ReturnGradient, QuadTestbedWithinFivePercent) {
  const EnvOptions o = quad_options(3);
  const ParamVector phi = reference_params(EnvFamily::kQuadTestbed, o);
  auto env = make_env(EnvFamily::kQuadTestbed, phi, 0, o);
  const Policy policy = Policy::init(env->spec(), 0, 8);
  ZOConfig cfg;
  cfg.sigma = 0.05;
  cfg.n_samples = 50000;
  cfg.seed = 3;
  const GradEstimate g =
      estimate_return_gradient(policy, EnvFamily::kQuadTestbed, phi, cfg, 1, o);
  const Vec truth = static_cast<const QuadTestbed&>(*env).return_gradient(phi.values());
  EXPECT_LT((g.grad - truth).norm() / truth.norm(), 0.05);
  EXPECT_EQ(g.n_used, 50000);
  EXPECT_TRUE((g.std_error.array() >= 0.0).all());
}

TEST(ReturnGradient, LinearObjectiveIsUnbiased) {
  Vec b(3);
  b << 1.0, -2.0, 0.5;
  const ZOObjective f = [&](const ParamVector& p, std::uint64_t) {
    return b.dot(p.values());
  };
  const ParamVector phi = ParamVector::from_values(Vec::Zero(3));
  const int runs = 50;
  Vec mean = Vec::Zero(3), pooled = Vec::Zero(3);
  for (int r = 0; r < runs; ++r) {
    ZOConfig cfg;
    cfg.antithetic = false;
    cfg.n_samples = 200;
    cfg.seed = 1000 + r;
    const GradEstimate g = estimate_gradient(f, phi, cfg);
    mean += g.grad / runs;
    pooled += g.std_error.cwiseAbs2() / runs;
  }
  const Vec se = (pooled / runs).cwiseSqrt();
  for (int k = 0; k < 3; ++k) EXPECT_LT(std::abs(mean[k] - b[k]), 3.0 * se[k]);
}

TEST(ReturnGradient, SingleSampleIsFinite) {
  ZOConfig cfg;
  cfg.antithetic = false;
  cfg.n_samples = 1;
  const GradEstimate g = estimate_gradient(
      quad_return(quad_options(2)), ParamVector::from_values(Vec::Zero(2)), cfg);
  EXPECT_TRUE(g.grad.allFinite());
  EXPECT_TRUE(g.std_error.allFinite());
  EXPECT_TRUE((g.std_error.array() >= 0.0).all());
}

TEST(ReturnGradient, UnbiasedOnQuadraticOverFiftyRuns) {
  const EnvOptions o = quad_options(3);
  const ParamVector phi = ParamVector::from_values(Vec::Constant(3, 0.3));
  const Vec truth = -o.quad.curvature * (phi.values() - o.quad.optimum);
  const int runs = 50;
  Vec mean = Vec::Zero(3), pooled = Vec::Zero(3);
  for (int r = 0; r < runs; ++r) {
    ZOConfig cfg;
    cfg.n_samples = 400;
    cfg.seed = 77 + r;
    const GradEstimate g = estimate_gradient(quad_return(o), phi, cfg);
    mean += g.grad / runs;
    pooled += g.std_error.cwiseAbs2() / runs;
  }
  const Vec se = (pooled / runs).cwiseSqrt();
  for (int k = 0; k < 3; ++k) EXPECT_LT(std::abs(mean[k] - truth[k]), 3.0 * se[k]);
}

TEST(ReturnGradient, AntitheticReducesVariance) {
  const EnvOptions o = quad_options(3);
  const ParamVector phi = ParamVector::from_values(Vec::Constant(3, 0.3));
  const Vec truth = -o.quad.curvature * (phi.values() - o.quad.optimum);
  int wins = 0;
  for (int rep = 0; rep < 20; ++rep) {
    double err_plain = 0.0, err_anti = 0.0;
    for (int r = 0; r < 10; ++r) {
      ZOConfig cfg;
      cfg.n_samples = 200;
      cfg.seed = 5000 + 100 * rep + r;
      cfg.antithetic = false;
      err_plain += (estimate_gradient(quad_return(o), phi, cfg).grad - truth).squaredNorm();
      cfg.antithetic = true;
      err_anti += (estimate_gradient(quad_return(o), phi, cfg).grad - truth).squaredNorm();
    }
    wins += err_anti < err_plain;
  }
  EXPECT_GT(wins, 10);
}

TEST(ReturnGradient, ResamplesOutOfBoundPerturbations) {
  ParamVector phi(Vec::Constant(1, 0.12), {"len"}, {{0.1, 5.0}});
  const ZOObjective f = [](const ParamVector& p, std::uint64_t) {
    EXPECT_TRUE(p.is_valid());
    return p[0];
  };
  ZOConfig cfg;
  cfg.sigma = 0.01;
  cfg.n_samples = 400;
  const GradEstimate g = estimate_gradient(f, phi, cfg);
  EXPECT_GT(g.resampled, 0);
  cfg.sigma = 100.0;
  cfg.max_resamples = 5;
  EXPECT_THROW(estimate_gradient(f, phi, cfg), NumericalError);
}

TEST(ReturnGradient, ParallelEqualsSerial) {
  const ZOObjective f = quad_return(quad_options(3));
  const ParamVector phi = ParamVector::from_values(Vec::Zero(3));
  ZOConfig cfg;
  cfg.n_samples = 1000;
  cfg.jobs = 1;
  const GradEstimate a = estimate_gradient(f, phi, cfg);
  cfg.jobs = 4;
  const GradEstimate b = estimate_gradient(f, phi, cfg);
  EXPECT_EQ(a.grad, b.grad);
  EXPECT_EQ(a.std_error, b.std_error);
}

TEST(Hessian, QuadBucketRecoversTwoIdentity) {
  EnvOptions o;
  o.quad_dim = 3;
  const ParamVector phi0 = reference_params(EnvFamily::kQuadTestbed, o);
  const auto bucket = build_bucket(EnvFamily::kQuadTestbed, phi0, 4, 1, o);
  ZOConfig cfg;
  cfg.sigma = 0.1;
  cfg.n_samples = 200000;
  cfg.seed = 9;
  const HessianEstimate h = estimate_w2_hessian(bucket, phi0, cfg);
  EXPECT_LT((h.matrix - 2.0 * Mat::Identity(3, 3)).cwiseAbs().maxCoeff(), 0.2);
  EXPECT_FALSE(h.regularized);
}

TEST(Hessian, AnisotropicRatio) {
  const ZOObjective f = [](const ParamVector& p, std::uint64_t) {
    return 0.5 * (p[0] * p[0] + 4.0 * p[1] * p[1]);
  };
  ZOConfig cfg;
  cfg.sigma = 0.1;
  cfg.n_samples = 100000;
  const HessianEstimate h =
      estimate_hessian(f, ParamVector::from_values(Vec::Zero(2)), cfg);
  EXPECT_NEAR(h.matrix(1, 1) / h.matrix(0, 0), 4.0, 0.4);
}

TEST(Hessian, ZeroFunctionGivesZeroBeforeFlooring) {
  const ZOObjective f = [](const ParamVector&, std::uint64_t) { return 0.0; };
  ZOConfig cfg;
  cfg.n_samples = 100;
  const HessianEstimate h =
      estimate_hessian(f, ParamVector::from_values(Vec::Zero(3)), cfg);
  EXPECT_EQ(h.raw, Mat::Zero(3, 3));
  EXPECT_TRUE(h.regularized);
  EXPECT_DOUBLE_EQ(h.min_eig_floor, 1e-3);
  EXPECT_TRUE(h.matrix.isApprox(1e-3 * Mat::Identity(3, 3)));
}

TEST(Hessian, ErrorShrinksWithSampleCount) {
  const ZOObjective f = [](const ParamVector& p, std::uint64_t) {
    return p.values().squaredNorm();
  };
  const ParamVector phi0 = ParamVector::from_values(Vec::Zero(3));
  double prev = std::numeric_limits<double>::infinity();
  for (int n : {1000, 10000, 100000}) {
    double err = 0.0;
    for (int s = 0; s < 10; ++s) {
      ZOConfig cfg;
      cfg.sigma = 0.1;
      cfg.antithetic = false;
      cfg.n_samples = n;
      cfg.seed = 300 + s;
      err += (estimate_hessian(f, phi0, cfg).raw - 2.0 * Mat::Identity(3, 3))
                 .cwiseAbs()
                 .maxCoeff();
    }
    EXPECT_LT(err, prev);
    prev = err;
  }
}

TEST(Hessian, RegularizationPostconditions) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    HessianEstimate est;
    const int d = rng.uniform_int(1, 6);
    est.raw = Mat::NullaryExpr(d, d, [&] { return rng.normal(); });
    regularize_hessian(est);
    EXPECT_TRUE(est.matrix.isApprox(est.matrix.transpose(), 0.0));
    Eigen::SelfAdjointEigenSolver<Mat> eig(est.matrix);
    EXPECT_GE(eig.eigenvalues().minCoeff(), est.min_eig_floor * (1.0 - 1e-9));
    Eigen::SelfAdjointEigenSolver<Mat> raw(0.5 * (est.raw + est.raw.transpose()));
    EXPECT_EQ(est.regularized, raw.eigenvalues().minCoeff() < est.min_eig_floor);
  }
}

TEST(Hessian, AgreesWithFiniteDifferencesOnExpectedW2) {
  EnvOptions o;
  o.quad_dim = 2;
  const ParamVector phi0 = reference_params(EnvFamily::kQuadTestbed, o);
  const auto bucket = build_bucket(EnvFamily::kQuadTestbed, phi0, 8, 2, o);
  ZOConfig cfg;
  cfg.sigma = 0.1;
  cfg.n_samples = 20000;
  const HessianEstimate h = estimate_w2_hessian(bucket, phi0, cfg);
  const FiniteDiff fd = finite_diff_oracle(
      [&](const ParamVector& p) { return expected_w2(bucket, p, phi0); }, phi0,
      1e-3);
  const double scale = fd.hessian.cwiseAbs().maxCoeff();
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      EXPECT_LE(std::abs(h.matrix(i, j) - fd.hessian(i, j)),
                0.15 * std::max(std::abs(fd.hessian(i, j)), scale));
    }
  }
}

TEST(Hessian, CartPoleIsPositiveScalar) {
  const ParamVector phi0 = reference_params(EnvFamily::kCartPole);
  const auto bucket = build_bucket(EnvFamily::kCartPole, phi0, 200, 3);
  ZOConfig cfg;
  cfg.sigma = 0.05;
  cfg.n_samples = 2000;
  const HessianEstimate h = estimate_w2_hessian(bucket, phi0, cfg);
  ASSERT_EQ(h.matrix.rows(), 1);
  EXPECT_GT(h.matrix(0, 0), 0.0);
  const FiniteDiff fd = finite_diff_oracle(
      [&](const ParamVector& p) { return expected_w2(bucket, p, phi0); }, phi0,
      1e-3);
  EXPECT_NEAR(h.matrix(0, 0) / fd.hessian(0, 0), 1.0, 0.15);
}

TEST(FiniteDiff, QuadraticExact) {
  Mat a(2, 2);
  a << 3.0, 1.0, 1.0, 2.0;
  Vec c(2);
  c << 0.5, -1.0;
  const auto f = [&](const ParamVector& p) {
    return 0.5 * p.values().dot(a * p.values()) + c.dot(p.values());
  };
  Vec x(2);
  x << 0.3, 0.7;
  const FiniteDiff fd = finite_diff_oracle(f, ParamVector::from_values(x), 1e-4);
  EXPECT_LT((fd.grad - (a * x + c)).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT((fd.hessian - a).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(FiniteDiff, ConstantAndNormSquared) {
  const ParamVector zero = ParamVector::from_values(Vec::Zero(3));
  const FiniteDiff c = finite_diff_oracle([](const ParamVector&) { return 4.0; }, zero, 1e-3);
  EXPECT_EQ(c.grad, Vec::Zero(3));
  EXPECT_EQ(c.hessian, Mat::Zero(3, 3));
  const FiniteDiff n = finite_diff_oracle(
      [](const ParamVector& p) { return p.values().squaredNorm(); }, zero, 1e-3);
  EXPECT_LT(n.grad.cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((n.hessian - 2.0 * Mat::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_THROW(finite_diff_oracle([](const ParamVector&) { return 0.0; }, zero, 0.0),
               InvalidArgument);
}

TEST(SolveSpd, ConjugateGradientMatchesDense) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const int d = rng.uniform_int(1, 10);
    const Mat b = Mat::NullaryExpr(d, d, [&] { return rng.normal(); });
    const Mat h = b * b.transpose() + 0.1 * Mat::Identity(d, d);
    const Vec g = rng.normal_vec(d);
    const Vec x1 = solve_spd(h, g);
    const Vec x2 = solve_spd(h, g, SolveMethod::kConjugateGradient);
    EXPECT_LT((x1 - x2).norm(), 1e-8 * (1.0 + x1.norm()));
  }
  EXPECT_THROW(solve_spd(-Mat::Identity(2, 2), Vec::Ones(2)), NumericalError);
}

TEST(HessianCache, RoundTripAndCorruption) {
  const auto dir = std::filesystem::temp_directory_path() / "wr2l_hessian_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "h0.bin";
  const ZOObjective f = [](const ParamVector& p, std::uint64_t) {
    return p.values().squaredNorm();
  };
  ZOConfig cfg;
  cfg.n_samples = 500;
  cfg.seed = 12;
  const HessianEstimate h =
      estimate_hessian(f, ParamVector::from_values(Vec::Zero(2)), cfg);
  save_hessian(h, path);
  const HessianEstimate back = load_hessian(path);
  EXPECT_EQ(back.matrix, h.matrix);
  EXPECT_EQ(back.raw, h.raw);
  EXPECT_EQ(back.seed, 12u);
  EXPECT_EQ(back.sigma, cfg.sigma);
  EXPECT_EQ(back.n_samples, 500);
  {
    std::fstream file(path, std::ios::in | std::ios::out | std::ios::binary);
    file.seekp(30);
    file.put('\x7f');
  }
  try {
    load_hessian(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("estimate-hessian"), std::string::npos);
  }
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace wr2l
