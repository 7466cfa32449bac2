#pragma once

#include "wr2l/common.hpp"
#include "wr2l/envs.hpp"
#include "wr2l/mlp.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace wr2l {

// Stochastic policy π_θ(a|s) with a separate state-value critic of the same
// shape. Discrete families use a categorical head over logits; continuous
// families use a diagonal Gaussian with a free log-std vector.
class Policy {
 public:
  static constexpr double kLogStdMin = -20.0;
  static constexpr double kLogStdMax = 2.0;

  Policy() = default;
  Policy(int state_dim, ActionType action_type, int action_dim,
         int hidden = 64);

  // Fresh weights from `seed`; log-std starts at `init_log_std`.
  static Policy init(const EnvSpec& spec, std::uint64_t seed, int hidden = 64,
                     double init_log_std = 0.0);

  int state_dim() const { return actor_.input_dim(); }
  int action_dim() const { return action_dim_; }
  int hidden() const { return actor_.hidden_dim(); }
  ActionType action_type() const { return action_type_; }
  bool discrete() const { return action_type_ == ActionType::kDiscrete; }

  Mlp& actor() { return actor_; }
  const Mlp& actor() const { return actor_; }
  Mlp& critic() { return critic_; }
  const Mlp& critic() const { return critic_; }
  // Clamped to [kLogStdMin, kLogStdMax] wherever it is used.
  Vec& log_std() { return log_std_; }
  const Vec& log_std() const { return log_std_; }
  Vec clamped_log_std() const;

  // Actor weights followed by log-std (the policy-gradient variables).
  Vec policy_params() const;
  void set_policy_params(const Vec& flat);

  bool all_finite() const;

  friend bool operator==(const Policy& a, const Policy& b);

 private:
  ActionType action_type_ = ActionType::kDiscrete;
  int action_dim_ = 0;
  Mlp actor_;
  Mlp critic_;
  Vec log_std_;
};

struct ActionSample {
  Action action;
  double log_prob = 0.0;
};

// Draws a ~ π_θ(·|s). Throws NumericalError on non-finite network output.
ActionSample sample_action(const Policy& policy, const Vec& state, Rng& rng);
// Most likely action: argmax logit or the Gaussian mean.
Action mean_action(const Policy& policy, const Vec& state);
double log_prob(const Policy& policy, const Vec& state, const Action& action);
double state_value(const Policy& policy, const Vec& state);
// Mean entropy (categorical or differential) over the columns of `states`.
double policy_entropy(const Policy& policy, const Mat& states);

struct RolloutBatch {
  Mat states;                  // state_dim x T
  std::vector<Action> actions;
  Vec rewards;
  Vec log_probs;               // at collection time
  Vec values;                  // critic at collection time
  // V(s_{t+1}) when the episode continues or was truncated, 0 on failure.
  Vec next_values;
  std::vector<char> dones;     // episode ended after step t
  Vec advantages;
  Vec returns;                 // advantages + values
  std::vector<int> episode_starts;
  std::vector<double> episode_returns;  // undiscounted totals
  std::vector<int> episode_lengths;

  int size() const { return static_cast<int>(rewards.size()); }
  bool has_advantages() const { return advantages.size() == rewards.size(); }
};

// Runs whole episodes on `env` until at least n_transitions steps have been
// collected (the final episode is completed, not cut). Actions are drawn
// from `rng`; the env keeps its own stream.
RolloutBatch collect_rollouts(const Policy& policy, Env& env,
                              int n_transitions, Rng& rng);

// Generalized advantage estimates. `next_values` must already be zero where
// the episode failed; `dones` stops the recursion at episode ends.
Vec compute_gae(const Vec& rewards, const Vec& values, const Vec& next_values,
                const std::vector<char>& dones, double gamma, double lambda);

// Fills batch.advantages and batch.returns.
void finish_batch(RolloutBatch& batch, double gamma, double lambda);

struct PPOConfig {
  double clip_ratio = 0.2;
  double policy_lr = 3e-4;
  double critic_lr = 1e-3;
  double gae_lambda = 0.95;
  double gamma = 0.99;
  int epochs = 10;
  int minibatch_size = 64;
  double entropy_coef = 0.0;
  // Training stops once the mean policy entropy drops below this.
  double entropy_stop_threshold = -0.5;
  double max_grad_norm = 0.5;
  int rollout_transitions = 5000;
  int hidden = 64;
  double init_log_std = 0.0;

  // Throws InvalidArgument on out-of-range fields.
  void validate() const;
};

class Adam {
 public:
  Adam() = default;
  explicit Adam(Eigen::Index n) : m_(Vec::Zero(n)), v_(Vec::Zero(n)) {}
  void step(Vec& params, const Vec& grad, double lr);
  long steps() const { return t_; }

 private:
  Vec m_, v_;
  long t_ = 0;
};

// Optimizer state carried across successive PPO updates.
struct PPOOptimizer {
  Adam actor;
  Adam critic;
  bool ready = false;
  void attach(const Policy& policy);
};

struct SurrogateResult {
  double value = 0.0;
  Vec grad;  // w.r.t. policy_params()
};

// Clipped surrogate (1/B) Σ min(r A, clip(r, 1±c) A) + entropy_coef · H over
// the listed batch indices, and its exact gradient.
SurrogateResult clipped_surrogate(const Policy& policy,
                                  const RolloutBatch& batch,
                                  const std::vector<int>& indices,
                                  double clip_ratio, double entropy_coef);

struct PPOStats {
  bool aborted = false;
  std::string diagnostic;
  // Full-batch surrogate before the first and after each epoch.
  std::vector<double> surrogate;
  double value_loss = 0.0;
  double approx_kl = 0.0;
};

// `epochs` passes of minibatch clipped-surrogate ascent and critic
// regression onto returns-to-go. Advantages are normalized per batch. A
// non-finite loss restores the input parameters and reports why.
PPOStats ppo_update(Policy& policy, const RolloutBatch& batch,
                    const PPOConfig& cfg, PPOOptimizer& opt, Rng& rng);

// Mean undiscounted return over `episodes` episodes of `env`.
double mean_return(const Policy& policy, Env& env, int episodes, Rng& rng,
                   bool use_mean_action = false);

// Versioned checkpoint: architecture header then flat parameter arrays.
void save_policy(const Policy& policy, const std::filesystem::path& path);
Policy load_policy(const std::filesystem::path& path);

}  // namespace wr2l
