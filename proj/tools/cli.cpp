#include "cli.hpp"

#include "wr2l/config.hpp"
#include "wr2l/core.hpp"
#include "wr2l/harness.hpp"
#include "wr2l/selftest.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <string>

namespace wr2l::cli {

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "YAML run configuration")->required();
  cmd->add_option("--seed", c.seed, "Overrides io.seed");
  cmd->add_option("--jobs", c.jobs, "Worker threads (0 = all cores)");
  cmd->add_option("--out", c.out, "Overrides io.out_dir");
}

// Loads the file and applies command-line overrides.
RunConfig resolve(const Common& c) {
  RunConfig cfg = load_config(c.config);
  if (c.seed) cfg.io.seed = *c.seed;
  if (c.jobs) cfg.io.jobs = *c.jobs;
  if (!c.out.empty()) cfg.io.out_dir = c.out;
  cfg.validate();
  return cfg;
}

fs::path output_dir(const RunConfig& cfg) {
  fs::path dir = cfg.io.out_dir;
  if (dir.is_relative()) {
    if (const char* root = std::getenv(kOutputRootEnv); root && *root) {
      dir = fs::path(root) / dir;
    }
  }
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) throw Error("cannot write '" + path.string() + "'");
}

// The exact configuration used, so a rerun from the run directory repeats it.
void write_resolved(const fs::path& dir, const RunConfig& cfg) {
  write_text(dir / "config.yaml", serialize_config(cfg));
}

void require_wr2l(const RunConfig& cfg) {
  if (!cfg.has_wr2l) throw ConfigError("missing required section 'wr2l'");
}

void write_phi(const fs::path& path, const ParamVector& phi) {
  std::ostringstream os;
  os << std::setprecision(17) << "name,value\n";
  for (Eigen::Index i = 0; i < phi.dim(); ++i) {
    os << phi.names()[static_cast<std::size_t>(i)] << "," << phi[i] << "\n";
  }
  write_text(path, os.str());
}

int cmd_train(const Common& c, std::ostream& out) {
  RunConfig cfg = resolve(c);
  require_wr2l(cfg);
  const fs::path dir = output_dir(cfg);
  write_resolved(dir, cfg);

  WR2LConfig w = cfg.wr2l;
  w.jobs = resolve_jobs(cfg.io.jobs);
  TrainOptions opts;
  opts.env = cfg.env.options;
  opts.phi0 = cfg.phi0();
  if (!cfg.io.hessian_cache.empty() && w.epsilon > 0.0) {
    HessianEstimate h = load_hessian(cfg.io.hessian_cache);
    if (h.phi0.size() != opts.phi0->dim() || h.phi0 != opts.phi0->values()) {
      throw Error("hessian cache '" + cfg.io.hessian_cache +
                  "' was estimated at a different phi0; re-run estimate-hessian");
    }
    opts.h0 = std::move(h);
  }

  // Rows are mirrored here so a failed run still leaves its report.
  TrainReport partial;
  partial.family = std::string(to_string(cfg.env.family));
  partial.param_names = opts.phi0->names();
  partial.seed = cfg.io.seed;
  partial.epsilon = w.epsilon;
  opts.on_iteration = [&](const TrainRow& row) {
    partial.rows.push_back(row);
    out << "iter " << row.k << " return " << row.return_mean << " constraint "
        << row.constraint << " entropy " << row.entropy << "\n";
  };
  TrainResult result;
  try {
    result = train(w, cfg.env.family, cfg.io.seed, opts);
  } catch (...) {
    partial.notes.push_back("aborted");
    partial.write_csv(dir / "report.csv");
    throw;
  }
  result.report.write_csv(dir / "report.csv");
  save_policy(result.policy, dir / "policy.bin");
  write_phi(dir / "phi.csv", result.phi);
  if (result.h0) save_hessian(*result.h0, dir / "hessian.bin");
  out << "wrote " << dir.string() << "\n";
  return kOk;
}

int cmd_estimate_hessian(const Common& c, std::ostream& out) {
  RunConfig cfg = resolve(c);
  require_wr2l(cfg);
  const fs::path dir = output_dir(cfg);
  write_resolved(dir, cfg);
  WR2LConfig w = cfg.wr2l;
  w.jobs = resolve_jobs(cfg.io.jobs);
  const HessianEstimate h = estimate_reference_hessian(
      w, cfg.env.family, cfg.phi0(), cfg.io.seed, cfg.env.options);
  const fs::path path =
      cfg.io.hessian_cache.empty() ? dir / "hessian.bin" : fs::path(cfg.io.hessian_cache);
  save_hessian(h, path);
  const Eigen::SelfAdjointEigenSolver<Mat> eig(h.matrix);
  const Vec ev = eig.eigenvalues();
  out << std::setprecision(6) << "H0 " << h.matrix.rows() << "x" << h.matrix.cols()
      << " eigenvalues [" << ev.minCoeff() << ", " << ev.maxCoeff() << "]"
      << " condition " << ev.maxCoeff() / ev.minCoeff()
      << (h.regularized ? " (floored)" : "") << "\n";
  out << "wrote " << path.string() << "\n";
  return kOk;
}

int cmd_eval(const Common& c, const std::string& checkpoint_flag, std::ostream& out) {
  RunConfig cfg = resolve(c);
  if (!checkpoint_flag.empty()) cfg.io.checkpoint = checkpoint_flag;
  if (cfg.io.checkpoint.empty()) {
    throw ConfigError("eval needs a checkpoint (--checkpoint or io.checkpoint)");
  }
  const fs::path dir = output_dir(cfg);
  write_resolved(dir, cfg);
  const Policy policy = load_policy(cfg.io.checkpoint);
  const EnvHandle env = make_env(cfg.env.family, cfg.phi0(), 0, cfg.env.options);
  const EnvSpec& spec = env->spec();
  if (policy.state_dim() != spec.state_dim || policy.action_dim() != spec.action_dim ||
      policy.action_type() != spec.action_type) {
    throw Error("checkpoint '" + cfg.io.checkpoint + "' does not fit family " +
                std::string(to_string(cfg.env.family)));
  }
  EvalOptions opts;
  opts.env = cfg.env.options;
  opts.mean_action = cfg.eval.mean_action;
  opts.jobs = resolve_jobs(cfg.io.jobs);
  opts.checkpoint = cfg.io.checkpoint;
  opts.epsilon = cfg.has_wr2l ? cfg.wr2l.epsilon : 0.0;
  const EvalReport rep =
      evaluate_grid(policy, cfg.env.family, cfg.eval.grid, cfg.io.seed, opts);
  rep.write_csv(dir / "eval.csv");
  int failed = 0;
  for (const EvalRow& r : rep.rows) failed += r.failed;
  out << "points " << rep.rows.size() << " failed " << failed << " worst-case "
      << rep.worst_case() << "\n";
  out << "wrote " << (dir / "eval.csv").string() << "\n";
  return kOk;
}

int cmd_selftest(bool quick, std::ostream& out) {
  SelftestOptions opts;
  opts.quick = quick;
  const auto cases = run_selftest(opts);
  bool ok = true;
  for (const SelftestCase& c : cases) {
    out << (c.passed ? "PASS  " : "FAIL  ") << std::left << std::setw(34) << c.name
        << std::right << std::fixed << std::setprecision(2) << std::setw(7)
        << c.seconds << "s  " << c.detail << "\n";
    ok = ok && c.passed;
  }
  out << (ok ? "all checks passed" : "some checks failed") << "\n";
  return ok ? kOk : kRuntimeError;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Wasserstein-robust reinforcement learning"};
  app.require_subcommand(1);
  Common common;
  std::string checkpoint;
  bool quick = false;

  CLI::App* train_cmd = app.add_subcommand("train", "Run robust training");
  add_common(train_cmd, common);
  CLI::App* hess_cmd =
      app.add_subcommand("estimate-hessian", "Estimate and cache the dynamics Hessian");
  add_common(hess_cmd, common);
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a policy over a grid");
  add_common(eval_cmd, common);
  eval_cmd->add_option("--checkpoint", checkpoint, "Policy checkpoint");
  CLI::App* self_cmd = app.add_subcommand("selftest", "Run the oracle suite");
  self_cmd->add_flag("--quick", quick, "Reduced budgets");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*train_cmd) return cmd_train(common, out);
    if (*hess_cmd) return cmd_estimate_hessian(common, out);
    if (*eval_cmd) return cmd_eval(common, checkpoint, out);
    return cmd_selftest(quick, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
}

}  // namespace wr2l::cli
