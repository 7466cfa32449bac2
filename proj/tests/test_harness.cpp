#include "wr2l/harness.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

namespace wr2l {
namespace {

Policy cartpole_policy(std::uint64_t seed) {
  const EnvHandle env =
      make_env(EnvFamily::kCartPole, CartPole::reference_params(), 0);
  return Policy::init(env->spec(), seed, 16);
}

// Output bias of the actor dominates: action 0 (push left) always.
Policy always_left() {
  Policy p = cartpole_policy(0);
  Vec& w = p.actor().params();
  w.setZero();
  w[w.size() - 2] = 50.0;
  w[w.size() - 1] = -50.0;
  return p;
}

EvalReport synthetic(std::vector<double> returns) {
  EvalReport r;
  r.family = "cartpole";
  r.param_names = {"pole_length"};
  for (std::size_t i = 0; i < returns.size(); ++i) {
    EvalRow row;
    row.params = Vec::Constant(1, 0.5 + 0.5 * static_cast<double>(i));
    row.return_mean = returns[i];
    row.n_episodes = 1;
    r.rows.push_back(row);
  }
  return r;
}

TEST(EvalGrid, DefaultCartpoleGrid) {
  const EvalGrid g = EvalGrid::default_for(EnvFamily::kCartPole);
  const auto pts = g.points(CartPole::reference_params());
  ASSERT_EQ(pts.size(), 28u);
  EXPECT_DOUBLE_EQ(pts.front()[0], 0.3);
  EXPECT_DOUBLE_EQ(pts.back()[0], 3.0);
  EXPECT_NEAR(pts[1][0] - pts[0][0], 0.1, 1e-12);
  EXPECT_EQ(g.episodes_per_point, 20);
  EXPECT_EQ(g.max_episode_len, 1000);
}

TEST(EvalGrid, ProductOrderLastAxisFastest) {
  EvalGrid g;
  g.axes = {{"length", {0.5, 1.0}}, {"mass", {1.0, 2.0, 3.0}}};
  const auto pts = g.points(Pendulum::reference_params());
  ASSERT_EQ(pts.size(), 6u);
  EXPECT_EQ(pts[0].values(), Eigen::Vector2d(0.5, 1.0));
  EXPECT_EQ(pts[1].values(), Eigen::Vector2d(0.5, 2.0));
  EXPECT_EQ(pts[3].values(), Eigen::Vector2d(1.0, 1.0));
}

TEST(EvalGrid, Validation) {
  const ParamVector ref = CartPole::reference_params();
  EvalGrid g = EvalGrid::linspace("pole_length", 0.3, 3.0, 5);
  EXPECT_NO_THROW(g.validate(ref));
  g.episodes_per_point = 0;
  EXPECT_THROW(g.validate(ref), InvalidArgument);
  EXPECT_THROW(EvalGrid::linspace("mass", 0.3, 3.0, 5).validate(ref),
               InvalidArgument);
  EXPECT_THROW(EvalGrid::linspace("pole_length", 0.01, 3.0, 5).validate(ref),
               PhysicalBoundsError);
}

TEST(EvaluateGrid, CartpoleReturnsCappedAndComplete) {
  const EvalGrid g = EvalGrid::default_for(EnvFamily::kCartPole);
  EvalOptions o;
  o.jobs = 4;
  const EvalReport rep = evaluate_grid(cartpole_policy(1), EnvFamily::kCartPole, g, 3, o);
  ASSERT_EQ(rep.rows.size(), 28u);
  for (const EvalRow& r : rep.rows) {
    EXPECT_FALSE(r.failed);
    EXPECT_TRUE(std::isfinite(r.return_mean));
    EXPECT_LE(r.return_mean, 1000.0);
    EXPECT_GE(r.return_mean, 1.0);
    EXPECT_EQ(r.n_episodes, 20);
  }
  EXPECT_EQ(rep.audit_mismatches, 0);
}

TEST(EvaluateGrid, AlwaysLeftIsNearMinimalAndDeterministic) {
  const EvalGrid g = EvalGrid::linspace("pole_length", 1.0, 1.0, 1, 20, 1000);
  const Policy p = always_left();
  for (bool mean : {false, true}) {
    EvalOptions o;
    o.mean_action = mean;
    const EvalReport a = evaluate_grid(p, EnvFamily::kCartPole, g, 5, o);
    const EvalReport b = evaluate_grid(p, EnvFamily::kCartPole, g, 5, o);
    EXPECT_LT(a.rows[0].return_mean, 15.0);
    EXPECT_EQ(a.rows[0].return_mean, b.rows[0].return_mean);
    EXPECT_EQ(a.rows[0].return_std, b.rows[0].return_std);
  }
}

TEST(EvaluateGrid, SameSeedSameReportAcrossJobs) {
  const EvalGrid g = EvalGrid::linspace("pole_length", 0.5, 2.5, 6, 5, 500);
  const Policy p = cartpole_policy(4);
  EvalOptions serial, threaded;
  threaded.jobs = 3;
  const EvalReport a = evaluate_grid(p, EnvFamily::kCartPole, g, 8, serial);
  const EvalReport b = evaluate_grid(p, EnvFamily::kCartPole, g, 8, threaded);
  const EvalReport c = evaluate_grid(p, EnvFamily::kCartPole, g, 9, serial);
  bool differs = false;
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    EXPECT_EQ(a.rows[i].return_mean, b.rows[i].return_mean);
    EXPECT_EQ(a.rows[i].return_std, b.rows[i].return_std);
    differs = differs || a.rows[i].return_mean != c.rows[i].return_mean;
  }
  EXPECT_TRUE(differs);
}

TEST(EvaluateGrid, StatisticsMatchEpisodeReturns) {
  // Episode returns of one point recomputed by hand with the same streams.
  const Policy p = cartpole_policy(2);
  const EvalGrid g = EvalGrid::linspace("pole_length", 1.5, 1.5, 1, 7, 300);
  const EvalReport rep = evaluate_grid(p, EnvFamily::kCartPole, g, 11);
  EnvOptions eo;
  eo.max_steps = 300;
  ParamVector phi = CartPole::reference_params().with_values(Vec::Constant(1, 1.5));
  EnvHandle env = make_env(EnvFamily::kCartPole, phi, stream_seed(11, 0, 0), eo);
  Rng rng(stream_seed(11, 0, 1));
  std::vector<double> rets;
  for (int e = 0; e < 7; ++e) rets.push_back(mean_return(p, *env, 1, rng));
  double mean = 0.0;
  for (double r : rets) mean += r / 7.0;
  double var = 0.0;
  for (double r : rets) var += (r - mean) * (r - mean) / 6.0;
  EXPECT_NEAR(rep.rows[0].return_mean, mean, 1e-12);
  EXPECT_NEAR(rep.rows[0].return_std, std::sqrt(var), 1e-12);
}

TEST(EvaluateGrid, ReturnAccountingAudit) {
  const EvalGrid g = EvalGrid::linspace("pole_length", 0.5, 2.0, 4, 10, 400);
  EvalOptions o;
  o.audit_fraction = 1.0;
  const EvalReport all = evaluate_grid(cartpole_policy(3), EnvFamily::kCartPole, g, 1, o);
  EXPECT_EQ(all.audited_episodes, 40);
  EXPECT_EQ(all.audit_mismatches, 0);

  // The default samples about 1% of episodes.
  const EvalGrid big = EvalGrid::linspace("pole_length", 0.5, 2.0, 20, 100, 50);
  const EvalReport some = evaluate_grid(cartpole_policy(3), EnvFamily::kCartPole, big, 1);
  EXPECT_GT(some.audited_episodes, 5);
  EXPECT_LT(some.audited_episodes, 45);
  EXPECT_EQ(some.audit_mismatches, 0);
}

TEST(EvaluatePoints, BadPointIsMarkedFailed) {
  const ParamVector ref = CartPole::reference_params();
  std::vector<ParamVector> pts = {ref, ref.with_values(Vec::Constant(1, -1.0))};
  const EvalReport rep =
      evaluate_points(cartpole_policy(0), EnvFamily::kCartPole, pts, 2, 100, 0);
  EXPECT_FALSE(rep.rows[0].failed);
  EXPECT_TRUE(rep.rows[1].failed);
  EXPECT_FALSE(rep.rows[1].error.empty());
  EXPECT_EQ(rep.worst_case(), rep.rows[0].return_mean);
}

TEST(EvaluatePoints, UniformSamplesStayInBounds) {
  const ParamVector ref = Pendulum::reference_params();
  const auto pts = sample_uniform_points(ref, 200, 5);
  ASSERT_EQ(pts.size(), 200u);
  for (const ParamVector& p : pts) EXPECT_TRUE(p.is_valid());
  EXPECT_EQ(sample_uniform_points(ref, 3, 5)[2], pts[2]);
}

TEST(EvalReport, CsvRoundTrip) {
  EvalReport rep = synthetic({10.0, 20.25, 30.5});
  rep.checkpoint = "policy.bin";
  rep.seed = 42;
  rep.epsilon = 0.05;
  rep.rows[1].failed = true;
  rep.rows[1].error = "boom";
  rep.rows[1].return_mean = std::nan("");
  rep.rows[1].return_std = std::nan("");
  rep.rows[1].n_episodes = 0;
  const auto path = std::filesystem::temp_directory_path() / "wr2l_eval.csv";
  rep.write_csv(path);
  std::ifstream in(path);
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line == "param:pole_length,return_mean,return_std,n_episodes") header_seen = true;
  }
  EXPECT_TRUE(header_seen);
  const EvalReport back = EvalReport::read_csv(path);
  EXPECT_EQ(back.family, "cartpole");
  EXPECT_EQ(back.checkpoint, "policy.bin");
  EXPECT_EQ(back.seed, 42u);
  EXPECT_EQ(back.epsilon, 0.05);
  ASSERT_EQ(back.rows.size(), 3u);
  EXPECT_EQ(back.rows[2].return_mean, 30.5);
  EXPECT_EQ(back.rows[0].params, rep.rows[0].params);
  EXPECT_TRUE(back.rows[1].failed);
  EXPECT_EQ(back.rows[1].error, "boom");
  std::filesystem::remove(path);
}

TEST(ComparePolicies, IdenticalReportsTie) {
  const EvalReport r = synthetic({5.0, 3.0, 8.0});
  const Comparison c = compare_policies({r, r});
  EXPECT_EQ(c.ties, 3);
  EXPECT_EQ(c.wins, std::vector<int>({0, 0}));
  for (const PointComparison& p : c.points) EXPECT_EQ(p.winner, -1);
  EXPECT_EQ(c.worst_case[0], c.worst_case[1]);
}

TEST(ComparePolicies, WinnersWorstCaseAndArea) {
  const Comparison c =
      compare_policies({synthetic({5.0, 3.0, 8.0}), synthetic({4.0, 6.0, 8.0})});
  EXPECT_EQ(c.points[0].winner, 0);
  EXPECT_EQ(c.points[1].winner, 1);
  EXPECT_EQ(c.points[2].winner, -1);
  EXPECT_EQ(c.wins, std::vector<int>({1, 1}));
  EXPECT_EQ(c.worst_case, std::vector<double>({3.0, 4.0}));
  // Spacing 0.5: 0.5·(5+3)/2 + 0.5·(3+8)/2.
  EXPECT_DOUBLE_EQ(c.auc[0], 4.75);
  EXPECT_DOUBLE_EQ(c.auc[1], 6.0);
}

TEST(ComparePolicies, Errors) {
  EXPECT_THROW(compare_policies({}), InvalidArgument);
  EXPECT_THROW(compare_policies({synthetic({1.0, 2.0}), synthetic({1.0})}),
               DimensionMismatch);
  EvalReport shifted = synthetic({1.0, 2.0});
  shifted.rows[1].params[0] = 9.0;
  EXPECT_THROW(compare_policies({synthetic({1.0, 2.0}), shifted}),
               DimensionMismatch);
}

}  // namespace
}  // namespace wr2l
