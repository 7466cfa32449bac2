#include "wr2l/config.hpp"

#include <yaml-cpp/yaml.h>

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace wr2l {

namespace {

// One YAML mapping being read. Keys are consumed as they are looked up;
// finish() rejects whatever is left.
class Section {
 public:
  Section(YAML::Node node, std::string path, const std::string& source)
      : node_(std::move(node)), path_(std::move(path)), source_(source) {
    if (!node_.IsMap()) fail(node_, "expected a mapping");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return static_cast<bool>(node_[key]);
  }

  template <class T>
  void get(const std::string& key, T& out) {
    if (has(key)) out = convert<T>(node_[key], key);
  }

  template <class T>
  void require(const std::string& key, T& out) {
    if (!has(key)) {
      fail(node_, "missing required field '" + field(key) + "'");
    }
    out = convert<T>(node_[key], key);
  }

  Section child(const std::string& key) {
    seen_.insert(key);
    return Section(node_[key], field(key), source_);
  }

  YAML::Node raw(const std::string& key) {
    seen_.insert(key);
    return node_[key];
  }

  void finish() const {
    for (const auto& kv : node_) {
      const std::string key = kv.first.as<std::string>();
      if (!seen_.count(key)) {
        fail(kv.first, "unknown key '" + field(key) + "'");
      }
    }
  }

  std::string field(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  [[noreturn]] void fail(const YAML::Node& at, const std::string& what) const {
    throw ConfigError(source_ + ":" + std::to_string(at.Mark().line + 1) +
                      ": " + what);
  }

  template <class T>
  T convert(const YAML::Node& n, const std::string& key) const {
    try {
      if constexpr (std::is_same_v<T, double>) {
        const double v = n.as<double>();
        if (std::isnan(v)) fail(n, field(key) + ": NaN is not allowed");
        return v;
      } else if constexpr (std::is_same_v<T, std::vector<double>>) {
        if (!n.IsSequence()) fail(n, field(key) + ": expected a list");
        std::vector<double> v;
        for (const auto& x : n) v.push_back(convert<double>(x, key));
        return v;
      } else {
        return n.as<T>();
      }
    } catch (const YAML::Exception&) {
      fail(n, field(key) + ": cannot read '" + (n.IsScalar() ? n.Scalar() : "") +
                  "' as the expected type");
    }
  }

 private:
  YAML::Node node_;
  std::string path_;
  std::string source_;
  std::set<std::string> seen_;
};

void read_zo(Section s, ZOConfig& zo) {
  s.get("sigma", zo.sigma);
  s.get("n_samples", zo.n_samples);
  s.get("antithetic", zo.antithetic);
  s.get("max_resamples", zo.max_resamples);
  s.finish();
}

void read_env(Section s, EnvSection& env) {
  std::string family;
  s.require("family", family);
  try {
    env.family = parse_env_family(family);
  } catch (const Error&) {
    s.fail(s.raw("family"), "env.family: unknown family '" + family + "'");
  }
  s.get("phi0", env.phi0);
  if (s.has("bounds")) {
    const YAML::Node b = s.raw("bounds");
    if (!b.IsSequence()) s.fail(b, "env.bounds: expected a list of [lo, hi]");
    env.bounds.clear();
    for (const auto& pair : b) {
      const auto v = s.convert<std::vector<double>>(pair, "bounds");
      if (v.size() != 2) s.fail(pair, "env.bounds: each entry needs [lo, hi]");
      env.bounds.push_back({v[0], v[1]});
    }
  }
  s.get("noise_std", env.options.noise_std);
  s.get("max_steps", env.options.max_steps);
  s.get("quad_dim", env.options.quad_dim);
  if (s.has("quad")) {
    Section q = s.child("quad");
    if (q.has("curvature")) {
      const YAML::Node rows = q.raw("curvature");
      if (!rows.IsSequence()) q.fail(rows, "env.quad.curvature: expected rows");
      std::vector<std::vector<double>> m;
      for (const auto& r : rows) m.push_back(q.convert<std::vector<double>>(r, "curvature"));
      Mat a(static_cast<Eigen::Index>(m.size()),
            m.empty() ? 0 : static_cast<Eigen::Index>(m[0].size()));
      for (std::size_t i = 0; i < m.size(); ++i) {
        if (m[i].size() != m[0].size()) {
          q.fail(rows, "env.quad.curvature: rows differ in length");
        }
        for (std::size_t j = 0; j < m[i].size(); ++j) {
          a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m[i][j];
        }
      }
      env.options.quad.curvature = a;
    }
    if (q.has("optimum")) {
      std::vector<double> v;
      q.get("optimum", v);
      env.options.quad.optimum = Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
    }
    q.get("offset", env.options.quad.offset);
    q.finish();
  }
  s.finish();
}

void read_wr2l(Section s, WR2LConfig& w) {
  s.require("epsilon", w.epsilon);
  s.get("inner_max_iters", w.inner_max_iters);
  s.get("inner_grad_tol", w.inner_grad_tol);
  s.get("inner_tol_relative", w.inner_tol_relative);
  s.get("reset_inner", w.reset_inner);
  s.get("outer_iters", w.outer_iters);
  s.get("zo_episodes", w.zo_episodes);
  s.get("line_search_episodes", w.line_search_episodes);
  s.get("bucket_pairs", w.bucket_pairs);
  s.get("n_next", w.n_next);
  if (s.has("line_search")) {
    Section l = s.child("line_search");
    l.get("c1", w.line_search.c1);
    l.get("c2", w.line_search.c2);
    l.get("alpha_init", w.line_search.alpha_init);
    l.get("alpha_min", w.line_search.alpha_min);
    l.get("max_backtracks", w.line_search.max_backtracks);
    l.finish();
  }
  if (s.has("zo")) read_zo(s.child("zo"), w.zo);
  if (s.has("hessian")) read_zo(s.child("hessian"), w.hessian_zo);
  if (s.has("ppo")) {
    Section p = s.child("ppo");
    PPOConfig& c = w.ppo;
    p.get("clip_ratio", c.clip_ratio);
    p.get("policy_lr", c.policy_lr);
    p.get("critic_lr", c.critic_lr);
    p.get("gae_lambda", c.gae_lambda);
    p.get("gamma", c.gamma);
    p.get("epochs", c.epochs);
    p.get("minibatch_size", c.minibatch_size);
    p.get("entropy_coef", c.entropy_coef);
    p.get("entropy_stop_threshold", c.entropy_stop_threshold);
    p.get("max_grad_norm", c.max_grad_norm);
    p.get("rollout_transitions", c.rollout_transitions);
    p.get("hidden", c.hidden);
    p.get("init_log_std", c.init_log_std);
    p.finish();
  }
  s.finish();
}

void read_eval(Section s, EvalSection& e, const std::string& source) {
  s.get("episodes_per_point", e.grid.episodes_per_point);
  s.get("max_episode_len", e.grid.max_episode_len);
  s.get("mean_action", e.mean_action);
  if (s.has("axes")) {
    const YAML::Node axes = s.raw("axes");
    if (!axes.IsSequence()) s.fail(axes, "eval.axes: expected a list");
    e.grid.axes.clear();
    for (const auto& node : axes) {
      Section a(node, "eval.axes[]", source);
      GridAxis axis;
      a.require("name", axis.name);
      if (a.has("values")) {
        a.get("values", axis.values);
      } else {
        double lo = 0.0, hi = 0.0;
        int n = 0;
        a.require("lo", lo);
        a.require("hi", hi);
        a.require("n", n);
        if (n < 1) a.fail(node, "eval.axes[].n must be >= 1");
        axis.values = EvalGrid::linspace(axis.name, lo, hi, n).axes[0].values;
      }
      a.finish();
      e.grid.axes.push_back(std::move(axis));
    }
  }
  s.finish();
}

void read_io(Section s, IoSection& io) {
  s.get("out_dir", io.out_dir);
  s.get("seed", io.seed);
  s.get("hessian_cache", io.hessian_cache);
  s.get("checkpoint", io.checkpoint);
  s.get("jobs", io.jobs);
  s.finish();
}

// Shortest text that parses back to the same double.
std::string num(double x) {
  if (std::isinf(x)) return x > 0 ? ".inf" : "-.inf";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  std::string s(buf, r.ptr);
  // Keep integral values typed as reals.
  if (s.find_first_of(".en") == std::string::npos) s += ".0";
  return s;
}

void emit_list(YAML::Emitter& e, const std::vector<double>& v) {
  e << YAML::Flow << YAML::BeginSeq;
  for (double x : v) e << num(x);
  e << YAML::EndSeq;
}

void emit_zo(YAML::Emitter& e, const char* key, const ZOConfig& zo) {
  e << YAML::Key << key << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "sigma" << YAML::Value << num(zo.sigma);
  e << YAML::Key << "n_samples" << YAML::Value << zo.n_samples;
  e << YAML::Key << "antithetic" << YAML::Value << zo.antithetic;
  e << YAML::Key << "max_resamples" << YAML::Value << zo.max_resamples;
  e << YAML::EndMap;
}

}  // namespace

ParamVector RunConfig::phi0() const {
  ParamVector ref = reference_params(env.family, env.options);
  Vec values = ref.values();
  if (!env.phi0.empty()) {
    if (static_cast<Eigen::Index>(env.phi0.size()) != ref.dim()) {
      throw ConfigError("env.phi0: expected " + std::to_string(ref.dim()) +
                        " values for " + std::string(to_string(env.family)));
    }
    values = Eigen::Map<const Vec>(env.phi0.data(), ref.dim());
  }
  std::vector<Bounds> bounds = ref.bounds();
  if (!env.bounds.empty()) {
    if (static_cast<Eigen::Index>(env.bounds.size()) != ref.dim()) {
      throw ConfigError("env.bounds: expected one [lo, hi] per parameter");
    }
    for (std::size_t i = 0; i < env.bounds.size(); ++i) {
      const Bounds& b = env.bounds[i];
      if (!(b.lo < b.hi)) throw ConfigError("env.bounds: need lo < hi");
      if (!bounds.empty() && (b.lo < bounds[i].lo || b.hi > bounds[i].hi)) {
        throw ConfigError("env.bounds: '" + ref.names()[i] +
                          "' exceeds the physical range");
      }
    }
    bounds = env.bounds;
  }
  ParamVector phi(values, ref.names(), bounds);
  if (!phi.is_valid()) {
    throw ConfigError("env.phi0: outside the valid parameter range");
  }
  return phi;
}

void RunConfig::validate() const {
  const ParamVector p = phi0();
  try {
    if (has_wr2l) wr2l.validate();
    if (has_eval) eval.grid.validate(p);
    make_env(env.family, p, 0, env.options);
  } catch (const ConfigError&) {
    throw;
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  if (io.jobs < 0) throw ConfigError("io.jobs must be >= 0");
}

RunConfig parse_config(const std::string& text, const std::string& source) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(source + ":" + std::to_string(e.mark.line + 1) + ": " +
                      e.msg);
  }
  RunConfig cfg;
  if (!root || root.IsNull()) throw ConfigError(source + ": empty config");
  Section top(root, "", source);
  if (!top.has("env")) top.fail(root, "missing required section 'env'");
  read_env(top.child("env"), cfg.env);
  if (top.has("wr2l")) {
    cfg.has_wr2l = true;
    read_wr2l(top.child("wr2l"), cfg.wr2l);
  }
  cfg.eval.grid = EvalGrid::default_for(cfg.env.family);
  if (top.has("eval")) {
    cfg.has_eval = true;
    read_eval(top.child("eval"), cfg.eval, source);
  }
  if (top.has("io")) read_io(top.child("io"), cfg.io);
  top.finish();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

std::string serialize_config(const RunConfig& cfg) {
  YAML::Emitter e;
  e << YAML::BeginMap;

  e << YAML::Key << "env" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "family" << YAML::Value << std::string(to_string(cfg.env.family));
  e << YAML::Key << "phi0" << YAML::Value;
  emit_list(e, cfg.env.phi0);
  e << YAML::Key << "bounds" << YAML::Value << YAML::BeginSeq;
  for (const Bounds& b : cfg.env.bounds) emit_list(e, {b.lo, b.hi});
  e << YAML::EndSeq;
  e << YAML::Key << "noise_std" << YAML::Value << num(cfg.env.options.noise_std);
  e << YAML::Key << "max_steps" << YAML::Value << cfg.env.options.max_steps;
  e << YAML::Key << "quad_dim" << YAML::Value << cfg.env.options.quad_dim;
  e << YAML::Key << "quad" << YAML::Value << YAML::BeginMap;
  const Mat& a = cfg.env.options.quad.curvature;
  e << YAML::Key << "curvature" << YAML::Value << YAML::BeginSeq;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    std::vector<double> row;
    for (Eigen::Index j = 0; j < a.cols(); ++j) row.push_back(a(i, j));
    emit_list(e, row);
  }
  e << YAML::EndSeq;
  const Vec& m = cfg.env.options.quad.optimum;
  e << YAML::Key << "optimum" << YAML::Value;
  emit_list(e, std::vector<double>(m.data(), m.data() + m.size()));
  e << YAML::Key << "offset" << YAML::Value << num(cfg.env.options.quad.offset);
  e << YAML::EndMap;
  e << YAML::EndMap;

  if (cfg.has_wr2l) {
    const WR2LConfig& w = cfg.wr2l;
    e << YAML::Key << "wr2l" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "epsilon" << YAML::Value << num(w.epsilon);
    e << YAML::Key << "inner_max_iters" << YAML::Value << w.inner_max_iters;
    e << YAML::Key << "inner_grad_tol" << YAML::Value << num(w.inner_grad_tol);
    e << YAML::Key << "inner_tol_relative" << YAML::Value << w.inner_tol_relative;
    e << YAML::Key << "reset_inner" << YAML::Value << w.reset_inner;
    e << YAML::Key << "outer_iters" << YAML::Value << w.outer_iters;
    e << YAML::Key << "zo_episodes" << YAML::Value << w.zo_episodes;
    e << YAML::Key << "line_search_episodes" << YAML::Value << w.line_search_episodes;
    e << YAML::Key << "bucket_pairs" << YAML::Value << w.bucket_pairs;
    e << YAML::Key << "n_next" << YAML::Value << w.n_next;
    e << YAML::Key << "line_search" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "c1" << YAML::Value << num(w.line_search.c1);
    e << YAML::Key << "c2" << YAML::Value << num(w.line_search.c2);
    e << YAML::Key << "alpha_init" << YAML::Value << num(w.line_search.alpha_init);
    e << YAML::Key << "alpha_min" << YAML::Value << num(w.line_search.alpha_min);
    e << YAML::Key << "max_backtracks" << YAML::Value << w.line_search.max_backtracks;
    e << YAML::EndMap;
    emit_zo(e, "zo", w.zo);
    emit_zo(e, "hessian", w.hessian_zo);
    const PPOConfig& p = w.ppo;
    e << YAML::Key << "ppo" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "clip_ratio" << YAML::Value << num(p.clip_ratio);
    e << YAML::Key << "policy_lr" << YAML::Value << num(p.policy_lr);
    e << YAML::Key << "critic_lr" << YAML::Value << num(p.critic_lr);
    e << YAML::Key << "gae_lambda" << YAML::Value << num(p.gae_lambda);
    e << YAML::Key << "gamma" << YAML::Value << num(p.gamma);
    e << YAML::Key << "epochs" << YAML::Value << p.epochs;
    e << YAML::Key << "minibatch_size" << YAML::Value << p.minibatch_size;
    e << YAML::Key << "entropy_coef" << YAML::Value << num(p.entropy_coef);
    e << YAML::Key << "entropy_stop_threshold" << YAML::Value
      << num(p.entropy_stop_threshold);
    e << YAML::Key << "max_grad_norm" << YAML::Value << num(p.max_grad_norm);
    e << YAML::Key << "rollout_transitions" << YAML::Value << p.rollout_transitions;
    e << YAML::Key << "hidden" << YAML::Value << p.hidden;
    e << YAML::Key << "init_log_std" << YAML::Value << num(p.init_log_std);
    e << YAML::EndMap;
    e << YAML::EndMap;
  }

  if (cfg.has_eval) {
    const EvalGrid& g = cfg.eval.grid;
    e << YAML::Key << "eval" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "episodes_per_point" << YAML::Value << g.episodes_per_point;
    e << YAML::Key << "max_episode_len" << YAML::Value << g.max_episode_len;
    e << YAML::Key << "mean_action" << YAML::Value << cfg.eval.mean_action;
    e << YAML::Key << "axes" << YAML::Value << YAML::BeginSeq;
    for (const GridAxis& axis : g.axes) {
      e << YAML::BeginMap << YAML::Key << "name" << YAML::Value << axis.name;
      e << YAML::Key << "values" << YAML::Value;
      emit_list(e, axis.values);
      e << YAML::EndMap;
    }
    e << YAML::EndSeq;
    e << YAML::EndMap;
  }

  e << YAML::Key << "io" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "out_dir" << YAML::Value << cfg.io.out_dir;
  e << YAML::Key << "seed" << YAML::Value << cfg.io.seed;
  e << YAML::Key << "hessian_cache" << YAML::Value << cfg.io.hessian_cache;
  e << YAML::Key << "checkpoint" << YAML::Value << cfg.io.checkpoint;
  e << YAML::Key << "jobs" << YAML::Value << cfg.io.jobs;
  e << YAML::EndMap;

  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

}  // namespace wr2l
