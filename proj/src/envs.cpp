#include "wr2l/envs.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace wr2l {

std::string_view to_string(EnvFamily family) {
  switch (family) {
    case EnvFamily::kCartPole:
      return "cartpole";
    case EnvFamily::kPendulum:
      return "pendulum";
    case EnvFamily::kQuadTestbed:
      return "quad_testbed";
  }
  return "unknown";
}

EnvFamily parse_env_family(std::string_view name) {
  if (name == "cartpole") return EnvFamily::kCartPole;
  if (name == "pendulum") return EnvFamily::kPendulum;
  if (name == "quad_testbed") return EnvFamily::kQuadTestbed;
  throw InvalidArgument("unknown environment family '" + std::string(name) +
                        "'");
}

// ---------------------------------------------------------------------------
// Env

Env::Env(EnvFamily family, EnvSpec spec, EnvOptions options,
         std::uint64_t seed)
    : family_(family),
      spec_(std::move(spec)),
      options_(std::move(options)),
      rng_(seed) {
  if (options_.noise_std < 0.0 || !std::isfinite(options_.noise_std)) {
    throw InvalidArgument("noise_std must be finite and >= 0");
  }
  if (options_.max_steps > 0) spec_.max_steps = options_.max_steps;
  if (spec_.max_steps < 1) throw InvalidArgument("max_steps must be >= 1");
  state_ = Vec::Zero(spec_.state_dim);
}

void Env::set_params(const ParamVector& params) {
  const ParamVector& ref = spec_.reference_params;
  if (params.dim() != ref.dim()) {
    std::ostringstream msg;
    msg << to_string(family_) << " expects " << ref.dim()
        << " dynamics parameters, got " << params.dim();
    throw DimensionMismatch(msg.str());
  }
  ParamVector labelled = ref.with_values(params.values());
  labelled.validate();
  params_ = std::move(labelled);
}

const Vec& Env::reset() {
  state_ = sample_initial_state(rng_);
  steps_ = 0;
  terminated_ = false;
  return state_;
}

Vec Env::add_noise(Vec next_state) {
  if (options_.noise_std > 0.0) {
    for (Eigen::Index i = 0; i < next_state.size(); ++i) {
      next_state[i] += options_.noise_std * rng_.normal();
    }
  }
  return next_state;
}

Transition Env::step(const Action& action) {
  if (terminated_) throw Error("step() on a terminated episode; call reset()");
  validate_action(action);
  Outcome out = simulate(state_, action);
  Transition t;
  t.state = state_;
  t.action = action;
  t.next_state = add_noise(std::move(out.next_state));
  t.reward = out.reward;
  ++steps_;
  const bool failed = is_failure(t.next_state);
  const bool capped = steps_ >= spec_.max_steps;
  t.done = failed || capped;
  t.truncated = capped && !failed;
  state_ = t.next_state;
  terminated_ = t.done;
  return t;
}

std::vector<Vec> Env::next_state_samples(const Vec& state,
                                         const Action& action, int n) {
  if (n < 1) throw InvalidArgument("next_state_samples: n must be >= 1");
  validate_state(state);
  validate_action(action);
  const Vec mean = simulate(state, action).next_state;
  std::vector<Vec> samples;
  samples.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) samples.push_back(add_noise(mean));
  return samples;
}

Action Env::random_action(Rng& rng) const {
  if (spec_.action_type == ActionType::kDiscrete) {
    return rng.uniform_int(0, spec_.action_dim - 1);
  }
  Vec a(spec_.action_dim);
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    a[i] = rng.uniform(spec_.action_low, spec_.action_high);
  }
  return a;
}

void Env::validate_action(const Action& action) const {
  if (spec_.action_type == ActionType::kDiscrete) {
    const int* idx = std::get_if<int>(&action);
    if (idx == nullptr) {
      throw InvalidArgument(std::string(to_string(family_)) +
                            " expects a discrete action");
    }
    if (*idx < 0 || *idx >= spec_.action_dim) {
      throw InvalidArgument("discrete action " + std::to_string(*idx) +
                            " out of range");
    }
    return;
  }
  const Vec* a = std::get_if<Vec>(&action);
  if (a == nullptr) {
    throw InvalidArgument(std::string(to_string(family_)) +
                          " expects a continuous action");
  }
  if (a->size() != spec_.action_dim) {
    throw DimensionMismatch("action dimension " + std::to_string(a->size()) +
                            " vs " + std::to_string(spec_.action_dim));
  }
  if (!a->allFinite()) throw InvalidArgument("action is not finite");
}

void Env::validate_state(const Vec& state) const {
  if (state.size() != spec_.state_dim) {
    throw DimensionMismatch("state dimension " + std::to_string(state.size()) +
                            " vs " + std::to_string(spec_.state_dim));
  }
  if (!state.allFinite()) throw InvalidArgument("state is not finite");
}

// ---------------------------------------------------------------------------
// CartPole

namespace {

EnvSpec cartpole_spec() {
  EnvSpec spec;
  spec.state_dim = 4;
  spec.action_dim = 2;
  spec.action_type = ActionType::kDiscrete;
  spec.max_steps = CartPole::kMaxSteps;
  spec.init_dist = "uniform(-0.05, 0.05) on (x, x_dot, theta, theta_dot)";
  spec.reference_params = CartPole::reference_params();
  return spec;
}

}  // namespace

ParamVector CartPole::reference_params() {
  return ParamVector(Vec::Constant(1, 1.0), {"pole_length"}, {{0.1, 5.0}});
}

CartPole::CartPole(const ParamVector& params, std::uint64_t seed,
                   EnvOptions options)
    : Env(EnvFamily::kCartPole, cartpole_spec(), std::move(options), seed) {
  set_params(params);
}

std::unique_ptr<Env> CartPole::clone() const {
  return std::make_unique<CartPole>(*this);
}

Env::Outcome CartPole::simulate(const Vec& s, const Action& action) const {
  const double force = std::get<int>(action) == 1 ? kForceMag : -kForceMag;
  const double half_length = 0.5 * params_[0];
  const double total_mass = kCartMass + kPoleMass;
  const double polemass_length = kPoleMass * half_length;

  const double x = s[0], x_dot = s[1], theta = s[2], theta_dot = s[3];
  const double cos_t = std::cos(theta);
  const double sin_t = std::sin(theta);
  const double temp =
      (force + polemass_length * theta_dot * theta_dot * sin_t) / total_mass;
  const double theta_acc =
      (kGravity * sin_t - cos_t * temp) /
      (half_length * (4.0 / 3.0 - kPoleMass * cos_t * cos_t / total_mass));
  const double x_acc = temp - polemass_length * theta_acc * cos_t / total_mass;

  Outcome out;
  out.next_state.resize(4);
  out.next_state << x + kDt * x_dot, x_dot + kDt * x_acc,
      theta + kDt * theta_dot, theta_dot + kDt * theta_acc;
  out.reward = 1.0;
  return out;
}

bool CartPole::is_failure(const Vec& s) const {
  return std::abs(s[0]) > kXMax || std::abs(s[2]) > kThetaMax;
}

Vec CartPole::sample_initial_state(Rng& rng) const {
  Vec s(4);
  for (int i = 0; i < 4; ++i) s[i] = rng.uniform(-0.05, 0.05);
  return s;
}

// ---------------------------------------------------------------------------
// Pendulum

namespace {

EnvSpec pendulum_spec() {
  EnvSpec spec;
  spec.state_dim = 3;
  spec.action_dim = 1;
  spec.action_type = ActionType::kContinuous;
  spec.max_steps = Pendulum::kMaxSteps;
  spec.init_dist = "theta ~ uniform(-pi, pi), theta_dot ~ uniform(-1, 1)";
  spec.reference_params = Pendulum::reference_params();
  spec.action_low = -Pendulum::kMaxTorque;
  spec.action_high = Pendulum::kMaxTorque;
  return spec;
}

double wrap_angle(double a) {
  constexpr double pi = std::numbers::pi;
  return std::remainder(a, 2.0 * pi);
}

}  // namespace

ParamVector Pendulum::reference_params() {
  Vec v(2);
  v << 1.0, 1.0;
  return ParamVector(v, {"length", "mass"}, {{0.1, 5.0}, {0.1, 10.0}});
}

Pendulum::Pendulum(const ParamVector& params, std::uint64_t seed,
                   EnvOptions options)
    : Env(EnvFamily::kPendulum, pendulum_spec(), std::move(options), seed) {
  set_params(params);
}

std::unique_ptr<Env> Pendulum::clone() const {
  return std::make_unique<Pendulum>(*this);
}

Env::Outcome Pendulum::simulate(const Vec& s, const Action& action) const {
  const double length = params_[0];
  const double mass = params_[1];
  const double theta = std::atan2(s[1], s[0]);
  const double theta_dot = s[2];
  const double u =
      std::clamp(std::get<Vec>(action)[0], -kMaxTorque, kMaxTorque);

  const double angle = wrap_angle(theta);
  const double cost =
      angle * angle + 0.1 * theta_dot * theta_dot + 0.001 * u * u;

  double new_theta_dot =
      theta_dot + (3.0 * kGravity / (2.0 * length) * std::sin(theta) +
                   3.0 / (mass * length * length) * u) *
                      kDt;
  new_theta_dot = std::clamp(new_theta_dot, -kMaxSpeed, kMaxSpeed);
  const double new_theta = theta + new_theta_dot * kDt;

  Outcome out;
  out.next_state.resize(3);
  out.next_state << std::cos(new_theta), std::sin(new_theta), new_theta_dot;
  out.reward = -cost;
  return out;
}

bool Pendulum::is_failure(const Vec&) const { return false; }

Vec Pendulum::sample_initial_state(Rng& rng) const {
  const double theta = rng.uniform(-std::numbers::pi, std::numbers::pi);
  const double theta_dot = rng.uniform(-1.0, 1.0);
  Vec s(3);
  s << std::cos(theta), std::sin(theta), theta_dot;
  return s;
}

// ---------------------------------------------------------------------------
// QuadTestbed

namespace {

EnvSpec quad_spec(int dim) {
  EnvSpec spec;
  spec.state_dim = dim;
  spec.action_dim = 1;
  spec.action_type = ActionType::kContinuous;
  spec.max_steps = 1;
  spec.init_dist = "dirac at 0";
  spec.reference_params = QuadTestbed::reference_params(dim);
  spec.action_low = -1.0;
  spec.action_high = 1.0;
  return spec;
}

int quad_dim_of(const EnvOptions& options) {
  if (options.quad_dim < 1) throw InvalidArgument("quad_dim must be >= 1");
  return options.quad_dim;
}

}  // namespace

ParamVector QuadTestbed::reference_params(int dim) {
  std::vector<std::string> names;
  for (int i = 0; i < dim; ++i) names.push_back("phi" + std::to_string(i));
  return ParamVector(Vec::Zero(dim), std::move(names));
}

QuadTestbed::QuadTestbed(const ParamVector& params, std::uint64_t seed,
                         EnvOptions options)
    : Env(EnvFamily::kQuadTestbed, quad_spec(quad_dim_of(options)),
          std::move(options), seed) {
  const int d = spec_.state_dim;
  const auto& q = options_.quad;
  curvature_ = q.curvature.size() == 0 ? Mat(Mat::Identity(d, d)) : q.curvature;
  optimum_ = q.optimum.size() == 0 ? Vec(Vec::Ones(d)) : q.optimum;
  offset_ = q.offset;
  if (curvature_.rows() != d || curvature_.cols() != d ||
      optimum_.size() != d) {
    throw DimensionMismatch("quad testbed constants do not match quad_dim");
  }
  set_params(params);
}

std::unique_ptr<Env> QuadTestbed::clone() const {
  return std::make_unique<QuadTestbed>(*this);
}

double QuadTestbed::expected_return(const Vec& phi) const {
  const Vec d = phi - optimum_;
  return offset_ - 0.5 * d.dot(curvature_ * d);
}

Vec QuadTestbed::return_gradient(const Vec& phi) const {
  // J is defined through the symmetric part of the curvature matrix.
  const Mat sym = 0.5 * (curvature_ + curvature_.transpose());
  return -sym * (phi - optimum_);
}

Env::Outcome QuadTestbed::simulate(const Vec& s, const Action&) const {
  Outcome out;
  out.next_state = s + params_.values();
  out.reward = expected_return(params_.values());
  return out;
}

bool QuadTestbed::is_failure(const Vec&) const { return false; }

Vec QuadTestbed::sample_initial_state(Rng&) const {
  return Vec::Zero(spec_.state_dim);
}

// ---------------------------------------------------------------------------

ParamVector reference_params(EnvFamily family, const EnvOptions& options) {
  switch (family) {
    case EnvFamily::kCartPole:
      return CartPole::reference_params();
    case EnvFamily::kPendulum:
      return Pendulum::reference_params();
    case EnvFamily::kQuadTestbed:
      return QuadTestbed::reference_params(quad_dim_of(options));
  }
  throw InvalidArgument("unknown environment family");
}

ParamVector family_params(EnvFamily family, const Vec& values,
                          const EnvOptions& options) {
  const ParamVector ref = reference_params(family, options);
  if (values.size() != ref.dim()) {
    std::ostringstream msg;
    msg << to_string(family) << " expects " << ref.dim()
        << " dynamics parameters, got " << values.size();
    throw DimensionMismatch(msg.str());
  }
  return ref.with_values(values);
}

EnvHandle make_env(EnvFamily family, const ParamVector& params,
                   std::uint64_t seed, const EnvOptions& options) {
  switch (family) {
    case EnvFamily::kCartPole:
      return std::make_unique<CartPole>(params, seed, options);
    case EnvFamily::kPendulum:
      return std::make_unique<Pendulum>(params, seed, options);
    case EnvFamily::kQuadTestbed:
      return std::make_unique<QuadTestbed>(params, seed, options);
  }
  throw InvalidArgument("unknown environment family");
}

}  // namespace wr2l
