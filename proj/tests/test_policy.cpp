#include "wr2l/policy.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>

namespace wr2l {
namespace {

EnvSpec tiny_spec(ActionType type) {
  EnvSpec spec;
  spec.state_dim = 3;
  spec.action_type = type;
  spec.action_dim = type == ActionType::kDiscrete ? 3 : 2;
  return spec;
}

// Ten transitions collected under a reference policy, then scored against a
// slightly moved policy so that ratios differ from one.
RolloutBatch synthetic_batch(const Policy& old, Rng& rng) {
  RolloutBatch b;
  const int n = 10;
  b.states.resize(old.state_dim(), n);
  b.log_probs.resize(n);
  b.advantages.resize(n);
  b.rewards = Vec::Zero(n);
  for (int t = 0; t < n; ++t) {
    const Vec s = rng.normal_vec(old.state_dim());
    b.states.col(t) = s;
    ActionSample a = sample_action(old, s, rng);
    b.actions.push_back(a.action);
    b.log_probs[t] = a.log_prob;
    b.advantages[t] = rng.normal();
  }
  return b;
}

double surrogate_at(Policy p, const Vec& theta, const RolloutBatch& b,
                    const std::vector<int>& idx, double clip, double ent) {
  p.set_policy_params(theta);
  return clipped_surrogate(p, b, idx, clip, ent).value;
}

void check_gradient(ActionType type, std::uint64_t seed, double ent) {
  const Policy old = Policy::init(tiny_spec(type), seed, 4, -0.3);
  Rng rng(seed + 100);
  const RolloutBatch batch = synthetic_batch(old, rng);
  Policy cur = old;
  Vec theta = cur.policy_params();
  theta += rng.normal_vec(theta.size(), 0.02);
  cur.set_policy_params(theta);
  std::vector<int> idx(10);
  std::iota(idx.begin(), idx.end(), 0);
  const double clip = 0.2;
  const Vec g = clipped_surrogate(cur, batch, idx, clip, ent).grad;
  Vec fd(theta.size());
  const double h = 1e-6;
  for (Eigen::Index k = 0; k < theta.size(); ++k) {
    Vec tp = theta, tm = theta;
    tp[k] += h;
    tm[k] -= h;
    fd[k] = (surrogate_at(cur, tp, batch, idx, clip, ent) -
             surrogate_at(cur, tm, batch, idx, clip, ent)) /
            (2.0 * h);
  }
  ASSERT_GT(fd.norm(), 0.0);
  EXPECT_LT((g - fd).norm() / fd.norm(), 1e-4);
}

TEST(Mlp, BackwardMatchesFiniteDifference) {
  Mlp net(3, 5, 2);
  Rng rng(1);
  net.initialize(rng, 1.0);
  const Mat x = Mat::Random(3, 4);
  const Mat w = Mat::Random(2, 4);
  Mlp::Cache cache;
  net.forward(x, &cache);
  Vec grad = Vec::Zero(net.num_params());
  net.backward(cache, w, grad);
  const double h = 1e-6;
  for (Eigen::Index k = 0; k < net.num_params(); ++k) {
    Mlp p = net, m = net;
    p.params()[k] += h;
    m.params()[k] -= h;
    const double fd =
        ((p.forward(x).array() * w.array()).sum() -
         (m.forward(x).array() * w.array()).sum()) / (2.0 * h);
    EXPECT_NEAR(grad[k], fd, 1e-7);
  }
}

TEST(Surrogate, GradientMatchesCentralDifferencesDiscrete) {
  for (std::uint64_t seed : {1u, 2u, 3u}) check_gradient(ActionType::kDiscrete, seed, 0.0);
  check_gradient(ActionType::kDiscrete, 4, 0.05);
}

TEST(Surrogate, GradientMatchesCentralDifferencesContinuous) {
  for (std::uint64_t seed : {1u, 2u, 3u}) check_gradient(ActionType::kContinuous, seed, 0.0);
  check_gradient(ActionType::kContinuous, 4, 0.05);
}

TEST(Surrogate, ZeroClipRatioGivesZeroGradient) {
  const Policy p = Policy::init(tiny_spec(ActionType::kContinuous), 9, 4);
  Rng rng(3);
  const RolloutBatch b = synthetic_batch(p, rng);
  std::vector<int> idx(10);
  std::iota(idx.begin(), idx.end(), 0);
  EXPECT_EQ(clipped_surrogate(p, b, idx, 0.0, 0.0).grad.norm(), 0.0);
}

TEST(SampleAction, ClampedLogStdGivesMean) {
  Policy p = Policy::init(tiny_spec(ActionType::kContinuous), 5, 8);
  p.log_std().setConstant(-1e6);
  Rng rng(0);
  const Vec s = Vec::Constant(3, 0.2);
  const Vec mean = std::get<Vec>(mean_action(p, s));
  for (int i = 0; i < 10; ++i) {
    const Vec a = std::get<Vec>(sample_action(p, s, rng).action);
    EXPECT_LT((a - mean).cwiseAbs().maxCoeff(), 1e-7);
  }
}

TEST(SampleAction, ReproducibleWithSeed) {
  const Policy p = Policy::init(tiny_spec(ActionType::kDiscrete), 5, 8);
  Rng a(12), b(12);
  for (int i = 0; i < 20; ++i) {
    const Vec s = Vec::Constant(3, 0.1 * i);
    EXPECT_EQ(sample_action(p, s, a).action, sample_action(p, s, b).action);
  }
}

TEST(SampleAction, LogProbDecreasesAwayFromMean) {
  const Policy p = Policy::init(tiny_spec(ActionType::kContinuous), 6, 8, 0.0);
  Rng rng(4);
  const Vec s = Vec::Constant(3, -0.3);
  const Vec mean = std::get<Vec>(mean_action(p, s));
  for (int i = 0; i < 50; ++i) {
    ActionSample as = sample_action(p, s, rng);
    const Vec a = std::get<Vec>(as.action);
    EXPECT_NEAR(as.log_prob, log_prob(p, s, as.action), 1e-12);
    const Vec farther = mean + 1.5 * (a - mean);
    EXPECT_GE(as.log_prob, log_prob(p, s, farther));
  }
}

TEST(SampleAction, DensityIntegratesToOne) {
  EnvSpec spec = tiny_spec(ActionType::kContinuous);
  spec.action_dim = 1;
  const Policy p = Policy::init(spec, 2, 8, -0.5);
  const Vec s = Vec::Constant(3, 0.4);
  const double mu = std::get<Vec>(mean_action(p, s))[0];
  // Monte-Carlo over a uniform proposal covering ±8 std.
  Rng rng(1);
  const double half = 8.0 * std::exp(-0.5);
  const int n = 200000;
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const double a = mu + rng.uniform(-half, half);
    acc += std::exp(log_prob(p, s, Vec::Constant(1, a)));
  }
  EXPECT_NEAR(acc / n * 2.0 * half, 1.0, 0.02);
}

TEST(SampleAction, RejectsWrongStateAndNonFiniteOutput) {
  Policy p = Policy::init(tiny_spec(ActionType::kDiscrete), 1, 4);
  Rng rng(0);
  EXPECT_THROW(sample_action(p, Vec::Zero(2), rng), DimensionMismatch);
  p.actor().params()[0] = std::nan("");
  EXPECT_THROW(sample_action(p, Vec::Ones(3), rng), NumericalError);
}

TEST(Entropy, ClosedForms) {
  EnvSpec spec = tiny_spec(ActionType::kContinuous);
  spec.action_dim = 1;
  Policy g = Policy::init(spec, 0, 4, 0.0);
  const Mat states = Mat::Random(3, 5);
  const double base = 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e);
  EXPECT_NEAR(policy_entropy(g, states), base, 1e-12);
  g.log_std()[0] = std::log(2.0);
  EXPECT_NEAR(policy_entropy(g, states), base + std::log(2.0), 1e-12);

  EnvSpec two = tiny_spec(ActionType::kDiscrete);
  two.action_dim = 2;
  Policy c = Policy::init(two, 0, 4);
  c.actor().params().setZero();
  EXPECT_NEAR(policy_entropy(c, states), std::log(2.0), 1e-12);
}

TEST(Gae, HandComputedThreeStepEpisode) {
  Vec r(3), v(3), nv(3);
  r << 1.0, 2.0, 3.0;
  v << 0.5, 0.25, 1.0;
  nv << 0.25, 1.0, 0.0;  // terminal failure after the third step
  const std::vector<char> done{0, 0, 1};
  const double g = 0.9;

  const Vec mc = compute_gae(r, v, nv, done, g, 1.0);
  EXPECT_NEAR(mc[2], 3.0 - 1.0, 1e-15);
  EXPECT_NEAR(mc[1], 2.0 + g * 3.0 - 0.25, 1e-15);
  EXPECT_NEAR(mc[0], 1.0 + g * 2.0 + g * g * 3.0 - 0.5, 1e-15);

  const Vec td = compute_gae(r, v, nv, done, g, 0.0);
  EXPECT_NEAR(td[0], 1.0 + g * 0.25 - 0.5, 1e-15);
  EXPECT_NEAR(td[1], 2.0 + g * 1.0 - 0.25, 1e-15);
  EXPECT_NEAR(td[2], 3.0 - 1.0, 1e-15);
}

TEST(Gae, StopsAtEpisodeBoundary) {
  Vec r = Vec::Ones(4), v = Vec::Zero(4), nv = Vec::Zero(4);
  const std::vector<char> done{0, 1, 0, 1};
  const Vec a = compute_gae(r, v, nv, done, 0.5, 1.0);
  EXPECT_DOUBLE_EQ(a[1], 1.0);
  EXPECT_DOUBLE_EQ(a[0], 1.5);
  EXPECT_DOUBLE_EQ(a[2], 1.5);
}

TEST(Rollouts, CompletesFinalEpisode) {
  auto env = make_env(EnvFamily::kCartPole, reference_params(EnvFamily::kCartPole), 3);
  const Policy p = Policy::init(env->spec(), 1);
  Rng rng(2);
  const RolloutBatch b = collect_rollouts(p, *env, 5000, rng);
  EXPECT_GE(b.size(), 5000);
  const int total = std::accumulate(b.episode_lengths.begin(),
                                    b.episode_lengths.end(), 0);
  EXPECT_EQ(total, b.size());
  EXPECT_TRUE(b.dones.back());
  double sum = 0.0;
  for (double x : b.episode_returns) sum += x;
  EXPECT_DOUBLE_EQ(sum, b.rewards.sum());
}

TEST(Rollouts, DeterministicGivenSeeds) {
  const ParamVector phi = reference_params(EnvFamily::kPendulum);
  auto e1 = make_env(EnvFamily::kPendulum, phi, 4);
  auto e2 = make_env(EnvFamily::kPendulum, phi, 4);
  const Policy p = Policy::init(e1->spec(), 1);
  Rng r1(9), r2(9);
  const RolloutBatch a = collect_rollouts(p, *e1, 300, r1);
  const RolloutBatch b = collect_rollouts(p, *e2, 300, r2);
  EXPECT_EQ(a.states, b.states);
  EXPECT_EQ(a.rewards, b.rewards);
  EXPECT_EQ(a.log_probs, b.log_probs);
}

TEST(Rollouts, ZeroRewardGivesZeroAdvantages) {
  // All-zero rewards with a zero critic: every TD residual vanishes.
  auto env = make_env(EnvFamily::kCartPole, reference_params(EnvFamily::kCartPole), 3);
  Policy p = Policy::init(env->spec(), 1);
  p.critic().params().setZero();
  Rng rng(2);
  RolloutBatch b = collect_rollouts(p, *env, 200, rng);
  b.rewards.setZero();
  finish_batch(b, 0.99, 0.95);
  EXPECT_EQ(b.advantages.cwiseAbs().maxCoeff(), 0.0);
}

RolloutBatch cartpole_batch(std::uint64_t seed, Policy* out) {
  auto env = make_env(EnvFamily::kCartPole, reference_params(EnvFamily::kCartPole), seed);
  *out = Policy::init(env->spec(), seed);
  Rng rng(seed);
  RolloutBatch b = collect_rollouts(*out, *env, 2000, rng);
  finish_batch(b, 0.99, 0.95);
  return b;
}

TEST(PpoUpdate, ZeroAdvantagesLeavePolicyUnchanged) {
  Policy p;
  RolloutBatch b = cartpole_batch(5, &p);
  b.advantages.setZero();
  const Vec before = p.policy_params();
  PPOConfig cfg;
  PPOOptimizer opt;
  Rng rng(0);
  const PPOStats st = ppo_update(p, b, cfg, opt, rng);
  EXPECT_FALSE(st.aborted);
  EXPECT_EQ(p.policy_params(), before);
}

TEST(PpoUpdate, SurrogateNonDecreasingOverEpochs) {
  int good = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Policy p;
    const RolloutBatch b = cartpole_batch(seed, &p);
    PPOConfig cfg;
    cfg.epochs = 5;
    PPOOptimizer opt;
    Rng rng(seed);
    const PPOStats st = ppo_update(p, b, cfg, opt, rng);
    ASSERT_FALSE(st.aborted);
    bool monotone = true;
    for (std::size_t e = 1; e < st.surrogate.size(); ++e) {
      monotone = monotone && st.surrogate[e] >= st.surrogate[e - 1];
    }
    good += monotone;
  }
  EXPECT_GE(good, 16);
}

TEST(PpoUpdate, NonFiniteLossRestoresInput) {
  Policy p;
  RolloutBatch b = cartpole_batch(2, &p);
  b.advantages[3] = std::numeric_limits<double>::infinity();
  const Policy before = p;
  PPOConfig cfg;
  PPOOptimizer opt;
  Rng rng(0);
  const PPOStats st = ppo_update(p, b, cfg, opt, rng);
  EXPECT_TRUE(st.aborted);
  EXPECT_FALSE(st.diagnostic.empty());
  EXPECT_TRUE(p == before);
}

TEST(PpoConfig, Validation) {
  PPOConfig c;
  EXPECT_NO_THROW(c.validate());
  c.gamma = 1.0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = PPOConfig{};
  c.clip_ratio = 1.0;
  EXPECT_THROW(c.validate(), InvalidArgument);
}

TEST(Checkpoint, RoundTripAndCorruption) {
  const auto dir = std::filesystem::temp_directory_path() / "wr2l_policy_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "policy.bin";
  const Policy p = Policy::init(tiny_spec(ActionType::kContinuous), 3, 16, -0.7);
  save_policy(p, path);
  EXPECT_TRUE(load_policy(path) == p);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(100);
    f.put('\x01');
  }
  EXPECT_THROW(load_policy(path), Error);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace wr2l
