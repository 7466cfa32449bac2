#include "wr2l/config.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <string>

namespace wr2l {
namespace {

constexpr const char* kCartpole = R"(env:
  family: cartpole
  phi0: [1.0]
wr2l:
  epsilon: 0.05
  outer_iters: 4
  line_search:
    c1: 0.001
  zo:
    n_samples: 32
  ppo:
    rollout_transitions: 2000
eval:
  axes:
    - name: pole_length
      lo: 0.3
      hi: 3.0
      n: 28
io:
  out_dir: runs/cp
  seed: 11
  jobs: 1
)";

std::string error_of(const std::string& text) {
  try {
    parse_config(text, "run.yaml");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

TEST(Config, ParsesSectionsAndKeepsDefaults) {
  const RunConfig cfg = parse_config(kCartpole);
  EXPECT_EQ(cfg.env.family, EnvFamily::kCartPole);
  ASSERT_TRUE(cfg.has_wr2l);
  EXPECT_DOUBLE_EQ(cfg.wr2l.epsilon, 0.05);
  EXPECT_EQ(cfg.wr2l.outer_iters, 4);
  EXPECT_DOUBLE_EQ(cfg.wr2l.line_search.c1, 0.001);
  EXPECT_DOUBLE_EQ(cfg.wr2l.line_search.c2, WolfeParams{}.c2);
  EXPECT_EQ(cfg.wr2l.zo.n_samples, 32);
  EXPECT_EQ(cfg.wr2l.ppo.rollout_transitions, 2000);
  EXPECT_EQ(cfg.wr2l.ppo.epochs, PPOConfig{}.epochs);
  ASSERT_EQ(cfg.eval.grid.axes.size(), 1u);
  EXPECT_EQ(cfg.eval.grid.points(cfg.phi0()).size(), 28u);
  EXPECT_EQ(cfg.io.seed, 11u);
  EXPECT_EQ(cfg.io.jobs, 1);
  EXPECT_EQ(cfg.phi0().names(), std::vector<std::string>{"pole_length"});
}

TEST(Config, SerializeRoundTrip) {
  const RunConfig a = parse_config(kCartpole);
  const std::string text = serialize_config(a);
  const RunConfig b = parse_config(text);
  EXPECT_EQ(serialize_config(b), text);
  EXPECT_EQ(b.phi0(), a.phi0());
  EXPECT_EQ(b.wr2l.ppo.rollout_transitions, 2000);
}

TEST(Config, RoundTripKeepsInfinity) {
  std::string text = kCartpole;
  text.replace(text.find("  outer_iters"), 0, "  inner_grad_tol: .inf\n");
  const RunConfig a = parse_config(text);
  EXPECT_TRUE(std::isinf(a.wr2l.inner_grad_tol));
  EXPECT_TRUE(std::isinf(parse_config(serialize_config(a)).wr2l.inner_grad_tol));
}

TEST(Config, UnknownKeyNamesFieldAndLine) {
  std::string text = kCartpole;
  text.replace(text.find("  outer_iters"), 0, "  epsilom: 0.1\n");
  const std::string msg = error_of(text);
  EXPECT_NE(msg.find("wr2l.epsilom"), std::string::npos) << msg;
  EXPECT_NE(msg.find("run.yaml:6"), std::string::npos) << msg;
}

TEST(Config, MissingEpsilonIsNamed) {
  std::string text = kCartpole;
  text.erase(text.find("  epsilon: 0.05\n"), 16);
  const std::string msg = error_of(text);
  EXPECT_NE(msg.find("wr2l.epsilon"), std::string::npos) << msg;
}

TEST(Config, MissingFamilyIsNamed) {
  EXPECT_NE(error_of("env:\n  phi0: [1.0]\n").find("env.family"), std::string::npos);
}

TEST(Config, WrongTypeIsRejected) {
  std::string text = kCartpole;
  text.replace(text.find("0.05"), 4, "lots");
  EXPECT_NE(error_of(text).find("wr2l.epsilon"), std::string::npos);
}

TEST(Config, PhysicallyInvalidPhi0IsRejected) {
  std::string text = kCartpole;
  text.replace(text.find("[1.0]"), 5, "[-1.0]");
  EXPECT_THROW(parse_config(text).validate(), ConfigError);
}

TEST(Config, NegativeEpsilonIsRejected) {
  std::string text = kCartpole;
  text.replace(text.find("0.05"), 4, "-0.1");
  EXPECT_THROW(parse_config(text).validate(), InvalidArgument);
}

TEST(Config, EvalGridDefaultsToFamily) {
  const RunConfig cfg = parse_config("env:\n  family: pendulum\n");
  EXPECT_FALSE(cfg.has_wr2l);
  EXPECT_EQ(cfg.eval.grid.points(cfg.phi0()).size(), 36u);
}

TEST(Config, ExplicitAxisValues) {
  const RunConfig cfg = parse_config(
      "env:\n  family: cartpole\neval:\n  axes:\n"
      "    - name: pole_length\n      values: [0.5, 1.5]\n");
  const auto pts = cfg.eval.grid.points(cfg.phi0());
  ASSERT_EQ(pts.size(), 2u);
  EXPECT_DOUBLE_EQ(pts[1][0], 1.5);
}

TEST(Config, ShippedConfigsLoad) {
  for (const char* name :
       {"cartpole_wr2l.yaml", "cartpole_ppo.yaml", "pendulum_wr2l.yaml"}) {
    SCOPED_TRACE(name);
    const RunConfig cfg = load_config(std::string(WR2L_CONFIG_DIR) + "/" + name);
    EXPECT_NO_THROW(cfg.validate());
    EXPECT_TRUE(cfg.has_wr2l);
  }
}

TEST(Config, MissingFileIsConfigError) {
  EXPECT_THROW(load_config("/nonexistent/run.yaml"), ConfigError);
}

}  // namespace
}  // namespace wr2l
