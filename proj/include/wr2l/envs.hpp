#pragma once

#include "wr2l/common.hpp"
#include "wr2l/param_vector.hpp"

#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace wr2l {

enum class EnvFamily { kCartPole, kPendulum, kQuadTestbed };
enum class ActionType { kDiscrete, kContinuous };

std::string_view to_string(EnvFamily family);
EnvFamily parse_env_family(std::string_view name);

// Discrete actions are indices, continuous actions are vectors.
using Action = std::variant<int, Vec>;

struct EnvSpec {
  int state_dim = 0;
  // Number of choices for discrete actions, vector length for continuous.
  int action_dim = 0;
  ActionType action_type = ActionType::kDiscrete;
  int max_steps = 1;
  std::string init_dist;
  ParamVector reference_params;
  // Box for continuous actions (same bound on every component).
  double action_low = 0.0;
  double action_high = 0.0;
};

struct Transition {
  Vec state;
  Action action;
  Vec next_state;
  double reward = 0.0;
  bool done = false;
  // Episode cut by the step cap rather than by a failure condition.
  bool truncated = false;
};

// Constants of the synthetic quadratic testbed, whose episode return is
// J(phi) = offset - ½ (phi - optimum)ᵀ curvature (phi - optimum).
struct QuadTestbedOptions {
  Mat curvature;  // empty means identity
  Vec optimum;    // empty means all ones
  double offset = 10.0;
};

struct EnvOptions {
  // Std of additive Gaussian noise on every successor-state component.
  double noise_std = 0.0;
  // 0 keeps the family default.
  int max_steps = 0;
  // Dimension of the quadratic testbed; ignored by other families.
  int quad_dim = 3;
  QuadTestbedOptions quad;
};

// A parameterised episodic simulator. Single owner; no shared state.
class Env {
 public:
  virtual ~Env() = default;

  const EnvSpec& spec() const { return spec_; }
  const ParamVector& params() const { return params_; }
  const EnvOptions& options() const { return options_; }
  EnvFamily family() const { return family_; }

  void set_params(const ParamVector& params);

  // Samples an initial state from the family's start distribution.
  const Vec& reset();
  Transition step(const Action& action);

  // n independent successor draws from (s, a) under the current parameters.
  // Uses the environment's RNG stream but leaves the episode state untouched.
  std::vector<Vec> next_state_samples(const Vec& state, const Action& action,
                                      int n);

  const Vec& state() const { return state_; }
  int elapsed_steps() const { return steps_; }
  bool terminated() const { return terminated_; }

  Action random_action(Rng& rng) const;
  void validate_action(const Action& action) const;
  void validate_state(const Vec& state) const;

  virtual std::unique_ptr<Env> clone() const = 0;

 protected:
  Env(EnvFamily family, EnvSpec spec, EnvOptions options, std::uint64_t seed);

  struct Outcome {
    Vec next_state;
    double reward = 0.0;
  };
  // Noise-free one-step dynamics under params().
  virtual Outcome simulate(const Vec& state, const Action& action) const = 0;
  virtual bool is_failure(const Vec& state) const = 0;
  virtual Vec sample_initial_state(Rng& rng) const = 0;

  Vec add_noise(Vec next_state);

  EnvFamily family_;
  EnvSpec spec_;
  EnvOptions options_;
  ParamVector params_;
  Rng rng_;
  Vec state_;
  int steps_ = 0;
  bool terminated_ = true;
};

using EnvHandle = std::unique_ptr<Env>;

// Classic cart-pole with φ = (pole_length). The ODE uses half the pole
// length, so pole_length = 1.0 is the textbook system.
class CartPole final : public Env {
 public:
  static constexpr double kGravity = 9.8;
  static constexpr double kCartMass = 1.0;
  static constexpr double kPoleMass = 0.1;
  static constexpr double kForceMag = 10.0;
  static constexpr double kDt = 0.02;
  static constexpr double kThetaMax = 12.0 * 3.14159265358979323846 / 180.0;
  static constexpr double kXMax = 2.4;
  static constexpr int kMaxSteps = 1000;

  CartPole(const ParamVector& params, std::uint64_t seed, EnvOptions options);
  std::unique_ptr<Env> clone() const override;

  static ParamVector reference_params();

 protected:
  Outcome simulate(const Vec& state, const Action& action) const override;
  bool is_failure(const Vec& state) const override;
  Vec sample_initial_state(Rng& rng) const override;
};

// Torque-limited pendulum swing-up with φ = (length, mass). State is
// (cos θ, sin θ, θ̇) with θ = 0 upright.
class Pendulum final : public Env {
 public:
  static constexpr double kGravity = 10.0;
  static constexpr double kDt = 0.05;
  static constexpr double kMaxTorque = 2.0;
  static constexpr double kMaxSpeed = 8.0;
  static constexpr int kMaxSteps = 200;

  Pendulum(const ParamVector& params, std::uint64_t seed, EnvOptions options);
  std::unique_ptr<Env> clone() const override;

  static ParamVector reference_params();

 protected:
  Outcome simulate(const Vec& state, const Action& action) const override;
  bool is_failure(const Vec& state) const override;
  Vec sample_initial_state(Rng& rng) const override;
};

// s' = s + φ (+ noise); every step pays J(φ). One step per episode by
// default, so the episode return is exactly J(φ).
class QuadTestbed final : public Env {
 public:
  QuadTestbed(const ParamVector& params, std::uint64_t seed,
              EnvOptions options);
  std::unique_ptr<Env> clone() const override;

  static ParamVector reference_params(int dim);

  // Analytic oracles for the configured constants.
  double expected_return(const Vec& phi) const;
  Vec return_gradient(const Vec& phi) const;
  const Mat& curvature() const { return curvature_; }
  const Vec& optimum() const { return optimum_; }
  double offset() const { return offset_; }

 protected:
  Outcome simulate(const Vec& state, const Action& action) const override;
  bool is_failure(const Vec& state) const override;
  Vec sample_initial_state(Rng& rng) const override;

 private:
  Mat curvature_;
  Vec optimum_;
  double offset_;
};

// Reference parameters φ0 (with labels and bounds) of a family.
ParamVector reference_params(EnvFamily family, const EnvOptions& options = {});

// Attaches the family's labels and bounds to raw values. Throws
// DimensionMismatch on wrong dimension; does not check bounds.
ParamVector family_params(EnvFamily family, const Vec& values,
                          const EnvOptions& options = {});

// Builds an isolated simulator whose RNG is seeded from `seed`. Throws
// DimensionMismatch or PhysicalBoundsError on bad parameters.
EnvHandle make_env(EnvFamily family, const ParamVector& params,
                   std::uint64_t seed, const EnvOptions& options = {});

}  // namespace wr2l
