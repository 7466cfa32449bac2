#include "wr2l/policy.hpp"

#include "wr2l/binary_io.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace wr2l {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // ln(2π)

// Column-wise log-softmax of a logits matrix.
Mat log_softmax(const Mat& logits) {
  Mat out(logits.rows(), logits.cols());
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    const double mx = logits.col(c).maxCoeff();
    const double lse =
        mx + std::log((logits.col(c).array() - mx).exp().sum());
    out.col(c) = logits.col(c).array() - lse;
  }
  return out;
}

Vec log_softmax(const Vec& logits) {
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  return logits.array() - lse;
}

double gaussian_log_prob(const Vec& a, const Vec& mean, const Vec& log_std) {
  double lp = 0.0;
  for (Eigen::Index k = 0; k < a.size(); ++k) {
    const double z = (a[k] - mean[k]) * std::exp(-log_std[k]);
    lp += -0.5 * z * z - log_std[k] - 0.5 * kLog2Pi;
  }
  return lp;
}

void require_state(const Policy& policy, const Vec& state) {
  if (state.size() != policy.state_dim()) {
    throw DimensionMismatch("policy expects state dimension " +
                            std::to_string(policy.state_dim()) + ", got " +
                            std::to_string(state.size()));
  }
}

void clip_norm(Vec& g, double max_norm) {
  if (max_norm <= 0.0) return;
  const double n = g.norm();
  if (n > max_norm) g *= max_norm / n;
}

}  // namespace

// ---------------------------------------------------------------------------
// Policy

Policy::Policy(int state_dim, ActionType action_type, int action_dim,
               int hidden)
    : action_type_(action_type),
      action_dim_(action_dim),
      actor_(state_dim, hidden, action_dim),
      critic_(state_dim, hidden, 1),
      log_std_(action_type == ActionType::kContinuous ? Vec::Zero(action_dim)
                                                      : Vec()) {}

Policy Policy::init(const EnvSpec& spec, std::uint64_t seed, int hidden,
                    double init_log_std) {
  Policy p(spec.state_dim, spec.action_type, spec.action_dim, hidden);
  Rng actor_rng(stream_seed(seed, 0));
  Rng critic_rng(stream_seed(seed, 1));
  p.actor_.initialize(actor_rng, 0.01);
  p.critic_.initialize(critic_rng, 1.0);
  p.log_std_.setConstant(init_log_std);
  return p;
}

Vec Policy::clamped_log_std() const {
  return log_std_.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
}

Vec Policy::policy_params() const {
  Vec flat(actor_.num_params() + log_std_.size());
  flat << actor_.params(), log_std_;
  return flat;
}

void Policy::set_policy_params(const Vec& flat) {
  if (flat.size() != actor_.num_params() + log_std_.size()) {
    throw DimensionMismatch("policy parameter vector has the wrong size");
  }
  actor_.params() = flat.head(actor_.num_params());
  log_std_ = flat.tail(log_std_.size());
}

bool Policy::all_finite() const {
  return actor_.params().allFinite() && critic_.params().allFinite() &&
         log_std_.allFinite();
}

bool operator==(const Policy& a, const Policy& b) {
  return a.action_type_ == b.action_type_ && a.action_dim_ == b.action_dim_ &&
         a.state_dim() == b.state_dim() && a.hidden() == b.hidden() &&
         a.actor_.params() == b.actor_.params() &&
         a.critic_.params() == b.critic_.params() &&
         a.log_std_.size() == b.log_std_.size() && a.log_std_ == b.log_std_;
}

// ---------------------------------------------------------------------------
// Action distribution

ActionSample sample_action(const Policy& policy, const Vec& state, Rng& rng) {
  require_state(policy, state);
  const Vec out = policy.actor().forward(state);
  if (!out.allFinite()) throw NumericalError("policy network output is not finite");
  ActionSample s;
  if (policy.discrete()) {
    const Vec logp = log_softmax(out);
    const double u = rng.uniform();
    double acc = 0.0;
    int a = static_cast<int>(logp.size()) - 1;
    for (Eigen::Index k = 0; k < logp.size(); ++k) {
      acc += std::exp(logp[k]);
      if (u < acc) {
        a = static_cast<int>(k);
        break;
      }
    }
    s.action = a;
    s.log_prob = logp[a];
    return s;
  }
  const Vec ls = policy.clamped_log_std();
  Vec a(out.size());
  for (Eigen::Index k = 0; k < a.size(); ++k) {
    a[k] = out[k] + std::exp(ls[k]) * rng.normal();
  }
  s.log_prob = gaussian_log_prob(a, out, ls);
  s.action = std::move(a);
  return s;
}

Action mean_action(const Policy& policy, const Vec& state) {
  require_state(policy, state);
  const Vec out = policy.actor().forward(state);
  if (!out.allFinite()) throw NumericalError("policy network output is not finite");
  if (policy.discrete()) {
    Eigen::Index best;
    out.maxCoeff(&best);
    return static_cast<int>(best);
  }
  return out;
}

double log_prob(const Policy& policy, const Vec& state, const Action& action) {
  require_state(policy, state);
  const Vec out = policy.actor().forward(state);
  if (policy.discrete()) {
    const int a = std::get<int>(action);
    if (a < 0 || a >= out.size()) throw InvalidArgument("action out of range");
    return log_softmax(out)[a];
  }
  const Vec& a = std::get<Vec>(action);
  if (a.size() != out.size()) throw DimensionMismatch("action dimension");
  return gaussian_log_prob(a, out, policy.clamped_log_std());
}

double state_value(const Policy& policy, const Vec& state) {
  require_state(policy, state);
  return policy.critic().forward(state)[0];
}

double policy_entropy(const Policy& policy, const Mat& states) {
  if (states.cols() == 0) return 0.0;
  if (!policy.discrete()) {
    const Vec ls = policy.clamped_log_std();
    return ls.sum() + 0.5 * (kLog2Pi + 1.0) * static_cast<double>(ls.size());
  }
  const Mat logp = log_softmax(policy.actor().forward(states));
  double total = 0.0;
  for (Eigen::Index c = 0; c < logp.cols(); ++c) {
    total -= (logp.col(c).array().exp() * logp.col(c).array()).sum();
  }
  return total / static_cast<double>(states.cols());
}

// ---------------------------------------------------------------------------
// Rollouts and advantages

RolloutBatch collect_rollouts(const Policy& policy, Env& env,
                              int n_transitions, Rng& rng) {
  if (n_transitions < 1) {
    throw InvalidArgument("collect_rollouts: n_transitions must be >= 1");
  }
  std::vector<Vec> states;
  std::vector<double> rewards, log_probs, values, next_values;
  RolloutBatch b;
  while (static_cast<int>(states.size()) < n_transitions) {
    Vec s = env.reset();
    b.episode_starts.push_back(static_cast<int>(states.size()));
    double total = 0.0;
    int length = 0;
    for (;;) {
      ActionSample as = sample_action(policy, s, rng);
      const Transition t = env.step(as.action);
      states.push_back(s);
      values.push_back(state_value(policy, s));
      b.actions.push_back(std::move(as.action));
      log_probs.push_back(as.log_prob);
      rewards.push_back(t.reward);
      b.dones.push_back(t.done ? 1 : 0);
      double next_v = 0.0;
      if (!t.done || t.truncated) next_v = state_value(policy, t.next_state);
      next_values.push_back(next_v);
      total += t.reward;
      ++length;
      if (t.done) break;
      s = t.next_state;
    }
    b.episode_returns.push_back(total);
    b.episode_lengths.push_back(length);
  }
  const auto n = static_cast<Eigen::Index>(states.size());
  b.states.resize(policy.state_dim(), n);
  for (Eigen::Index i = 0; i < n; ++i) {
    b.states.col(i) = states[static_cast<std::size_t>(i)];
  }
  b.rewards = Eigen::Map<const Vec>(rewards.data(), n);
  b.log_probs = Eigen::Map<const Vec>(log_probs.data(), n);
  b.values = Eigen::Map<const Vec>(values.data(), n);
  b.next_values = Eigen::Map<const Vec>(next_values.data(), n);
  return b;
}

Vec compute_gae(const Vec& rewards, const Vec& values, const Vec& next_values,
                const std::vector<char>& dones, double gamma, double lambda) {
  const Eigen::Index n = rewards.size();
  if (values.size() != n || next_values.size() != n ||
      static_cast<Eigen::Index>(dones.size()) != n) {
    throw DimensionMismatch("compute_gae: inconsistent batch lengths");
  }
  Vec adv(n);
  double running = 0.0;
  for (Eigen::Index t = n - 1; t >= 0; --t) {
    if (dones[static_cast<std::size_t>(t)]) running = 0.0;
    const double delta = rewards[t] + gamma * next_values[t] - values[t];
    running = delta + gamma * lambda * running;
    adv[t] = running;
  }
  return adv;
}

void finish_batch(RolloutBatch& batch, double gamma, double lambda) {
  batch.advantages = compute_gae(batch.rewards, batch.values,
                                 batch.next_values, batch.dones, gamma, lambda);
  batch.returns = batch.advantages + batch.values;
}

// ---------------------------------------------------------------------------
// PPO

void PPOConfig::validate() const {
  auto fail = [](const std::string& what) {
    throw InvalidArgument("ppo config: " + what);
  };
  if (!(clip_ratio >= 0.0 && clip_ratio < 1.0)) fail("clip_ratio must be in [0, 1)");
  if (!(gamma > 0.0 && gamma < 1.0)) fail("gamma must be in (0, 1)");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) fail("gae_lambda must be in [0, 1]");
  if (!(policy_lr > 0.0) || !(critic_lr > 0.0)) fail("learning rates must be > 0");
  if (epochs < 1) fail("epochs must be >= 1");
  if (minibatch_size < 1) fail("minibatch_size must be >= 1");
  if (rollout_transitions < 1) fail("rollout_transitions must be >= 1");
  if (hidden < 1) fail("hidden must be >= 1");
  if (!std::isfinite(entropy_coef) || !std::isfinite(max_grad_norm)) {
    fail("entropy_coef and max_grad_norm must be finite");
  }
}

void Adam::step(Vec& params, const Vec& grad, double lr) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  if (m_.size() != params.size()) {
    m_ = Vec::Zero(params.size());
    v_ = Vec::Zero(params.size());
    t_ = 0;
  }
  ++t_;
  m_ = b1 * m_ + (1.0 - b1) * grad;
  v_ = b2 * v_ + (1.0 - b2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  params.array() -=
      lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps);
}

void PPOOptimizer::attach(const Policy& policy) {
  actor = Adam(policy.actor().num_params() + policy.log_std().size());
  critic = Adam(policy.critic().num_params());
  ready = true;
}

SurrogateResult clipped_surrogate(const Policy& policy,
                                  const RolloutBatch& batch,
                                  const std::vector<int>& indices,
                                  double clip_ratio, double entropy_coef) {
  if (!batch.has_advantages()) {
    throw InvalidArgument("clipped_surrogate: batch has no advantages");
  }
  const auto b = static_cast<Eigen::Index>(indices.size());
  const Mlp& actor = policy.actor();
  SurrogateResult res;
  res.grad = Vec::Zero(actor.num_params() + policy.log_std().size());
  if (b == 0) return res;

  Mat x(policy.state_dim(), b);
  for (Eigen::Index c = 0; c < b; ++c) x.col(c) = batch.states.col(indices[c]);
  Mlp::Cache cache;
  const Mat out = actor.forward(x, &cache);
  Mat dout = Mat::Zero(out.rows(), out.cols());
  const double inv_b = 1.0 / static_cast<double>(b);
  double total = 0.0;

  // d/dlogp of min(rA, clip(r)A) is rA on the unclipped branch and 0 where
  // the clipped term is the smaller one.
  auto surrogate_term = [&](double logp, Eigen::Index c, double* coef) {
    const int t = indices[static_cast<std::size_t>(c)];
    const double adv = batch.advantages[t];
    const double r = std::exp(logp - batch.log_probs[t]);
    const double clipped = std::clamp(r, 1.0 - clip_ratio, 1.0 + clip_ratio);
    const bool active = adv >= 0.0 ? r < 1.0 + clip_ratio : r > 1.0 - clip_ratio;
    *coef = active ? adv * r * inv_b : 0.0;
    return std::min(r * adv, clipped * adv);
  };

  if (policy.discrete()) {
    const Mat logp = log_softmax(out);
    for (Eigen::Index c = 0; c < b; ++c) {
      const int a = std::get<int>(batch.actions[static_cast<std::size_t>(indices[c])]);
      double coef;
      total += surrogate_term(logp(a, c), c, &coef);
      const Vec p = logp.col(c).array().exp();
      dout.col(c) = -coef * p;
      dout(a, c) += coef;
      if (entropy_coef != 0.0) {
        const double h = -(p.array() * logp.col(c).array()).sum();
        total += entropy_coef * h;
        dout.col(c).array() -=
            entropy_coef * inv_b * p.array() * (logp.col(c).array() + h);
      }
    }
  } else {
    const Vec ls = policy.clamped_log_std();
    const Vec inv_var = (-2.0 * ls).array().exp();
    Vec dls = Vec::Zero(ls.size());
    for (Eigen::Index c = 0; c < b; ++c) {
      const Vec& a = std::get<Vec>(batch.actions[static_cast<std::size_t>(indices[c])]);
      const Vec diff = a - out.col(c);
      double coef;
      total += surrogate_term(gaussian_log_prob(a, out.col(c), ls), c, &coef);
      dout.col(c) = coef * diff.cwiseProduct(inv_var);
      dls.array() += coef * (diff.array().square() * inv_var.array() - 1.0);
    }
    if (entropy_coef != 0.0) {
      total += entropy_coef * static_cast<double>(b) *
               (ls.sum() + 0.5 * (kLog2Pi + 1.0) * static_cast<double>(ls.size()));
      dls.array() += entropy_coef;
    }
    // The clamp blocks the gradient outside the admissible range.
    for (Eigen::Index k = 0; k < ls.size(); ++k) {
      const double raw = policy.log_std()[k];
      if (raw < Policy::kLogStdMin || raw > Policy::kLogStdMax) dls[k] = 0.0;
    }
    res.grad.tail(ls.size()) = dls;
  }
  Vec actor_grad = Vec::Zero(actor.num_params());
  actor.backward(cache, dout, actor_grad);
  res.grad.head(actor.num_params()) = actor_grad;
  res.value = total * inv_b;
  return res;
}

PPOStats ppo_update(Policy& policy, const RolloutBatch& batch,
                    const PPOConfig& cfg, PPOOptimizer& opt, Rng& rng) {
  cfg.validate();
  if (!batch.has_advantages()) {
    throw InvalidArgument("ppo_update: call finish_batch before updating");
  }
  if (!opt.ready) opt.attach(policy);
  const Policy backup = policy;
  const PPOOptimizer opt_backup = opt;
  PPOStats stats;
  auto abort = [&](const std::string& why) {
    policy = backup;
    opt = opt_backup;
    stats.aborted = true;
    stats.diagnostic = why;
    return stats;
  };

  RolloutBatch norm = batch;
  const int n = batch.size();
  const double mean = norm.advantages.mean();
  const double var = (norm.advantages.array() - mean).square().mean();
  norm.advantages = (norm.advantages.array() - mean) / (std::sqrt(var) + 1e-8);

  std::vector<int> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), 0);
  stats.surrogate.push_back(
      clipped_surrogate(policy, norm, all, cfg.clip_ratio, cfg.entropy_coef).value);
  if (!std::isfinite(stats.surrogate.back())) {
    return abort("non-finite surrogate on the input batch");
  }

  std::vector<int> order = all;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (int start = 0; start < n; start += cfg.minibatch_size) {
      const int stop = std::min(n, start + cfg.minibatch_size);
      const std::vector<int> mb(order.begin() + start, order.begin() + stop);

      SurrogateResult s =
          clipped_surrogate(policy, norm, mb, cfg.clip_ratio, cfg.entropy_coef);
      if (!std::isfinite(s.value) || !s.grad.allFinite()) {
        return abort("non-finite policy loss in epoch " + std::to_string(epoch));
      }
      Vec step = -s.grad;
      clip_norm(step, cfg.max_grad_norm);
      Vec theta = policy.policy_params();
      opt.actor.step(theta, step, cfg.policy_lr);
      policy.set_policy_params(theta);

      const auto b = static_cast<Eigen::Index>(mb.size());
      Mat x(policy.state_dim(), b);
      Vec target(b);
      for (Eigen::Index c = 0; c < b; ++c) {
        x.col(c) = norm.states.col(mb[static_cast<std::size_t>(c)]);
        target[c] = norm.returns[mb[static_cast<std::size_t>(c)]];
      }
      Mlp::Cache cache;
      const Mat v = policy.critic().forward(x, &cache);
      const Mat dv = (v.row(0).transpose() - target).transpose() /
                     static_cast<double>(b);
      Vec cgrad = Vec::Zero(policy.critic().num_params());
      policy.critic().backward(cache, dv, cgrad);
      if (!cgrad.allFinite()) {
        return abort("non-finite critic loss in epoch " + std::to_string(epoch));
      }
      clip_norm(cgrad, cfg.max_grad_norm);
      opt.critic.step(policy.critic().params(), cgrad, cfg.critic_lr);
    }
    stats.surrogate.push_back(
        clipped_surrogate(policy, norm, all, cfg.clip_ratio, cfg.entropy_coef).value);
  }
  if (!policy.all_finite()) return abort("parameters became non-finite");

  const Mat v = policy.critic().forward(norm.states);
  stats.value_loss =
      0.5 * (v.row(0).transpose() - norm.returns).squaredNorm() / n;
  double kl = 0.0;
  for (int t = 0; t < n; ++t) {
    kl += norm.log_probs[t] -
          log_prob(policy, norm.states.col(t), norm.actions[static_cast<std::size_t>(t)]);
  }
  stats.approx_kl = kl / n;
  return stats;
}

double mean_return(const Policy& policy, Env& env, int episodes, Rng& rng,
                   bool use_mean_action) {
  if (episodes < 1) throw InvalidArgument("mean_return: episodes must be >= 1");
  double total = 0.0;
  for (int e = 0; e < episodes; ++e) {
    Vec s = env.reset();
    for (;;) {
      const Action a = use_mean_action ? mean_action(policy, s)
                                       : sample_action(policy, s, rng).action;
      const Transition t = env.step(a);
      total += t.reward;
      if (t.done) break;
      s = t.next_state;
    }
  }
  return total / episodes;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
constexpr std::string_view kPolicyMagic = "WR2L_POL";
constexpr std::uint32_t kPolicyVersion = 1;
}  // namespace

void save_policy(const Policy& policy, const std::filesystem::path& path) {
  io::Writer w;
  w.put<std::int32_t>(policy.state_dim());
  w.put<std::uint8_t>(policy.discrete() ? 0 : 1);
  w.put<std::int32_t>(policy.action_dim());
  w.put<std::int32_t>(policy.hidden());
  w.put_vec(policy.actor().params());
  w.put_vec(policy.critic().params());
  w.put_vec(policy.log_std());
  w.write_file(path, kPolicyMagic, kPolicyVersion);
}

Policy load_policy(const std::filesystem::path& path) {
  auto r = io::Reader::open(path, kPolicyMagic, kPolicyVersion);
  const int state_dim = r.get<std::int32_t>();
  const auto type = r.get<std::uint8_t>() == 0 ? ActionType::kDiscrete
                                               : ActionType::kContinuous;
  const int action_dim = r.get<std::int32_t>();
  const int hidden = r.get<std::int32_t>();
  if (state_dim < 1 || action_dim < 1 || hidden < 1) {
    throw io::FormatError("policy checkpoint has an invalid architecture");
  }
  Policy p(state_dim, type, action_dim, hidden);
  Vec actor = r.get_vec();
  Vec critic = r.get_vec();
  Vec log_std = r.get_vec();
  if (actor.size() != p.actor().num_params() ||
      critic.size() != p.critic().num_params() ||
      log_std.size() != p.log_std().size() || !r.at_end()) {
    throw io::FormatError("policy checkpoint does not match its header");
  }
  p.actor().params() = std::move(actor);
  p.critic().params() = std::move(critic);
  p.log_std() = std::move(log_std);
  return p;
}

}  // namespace wr2l
