#include "wr2l/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace wr2l {

namespace {

std::vector<double> even_values(double lo, double hi, int n) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    v[static_cast<std::size_t>(i)] =
        n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / (n - 1);
  }
  return v;
}

Eigen::Index index_of(const ParamVector& ref, const std::string& name) {
  const auto& names = ref.names();
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) {
    throw InvalidArgument("grid axis '" + name + "' is not a parameter");
  }
  return it - names.begin();
}

// Undiscounted return of one episode. When `trace` is set, per-step
// rewards are logged there as well.
double run_episode(const Policy& policy, Env& env, Rng& rng, bool mean,
                   std::vector<double>* trace, int* steps) {
  double total = 0.0;
  Vec s = env.reset();
  *steps = 0;
  for (;;) {
    const Action a = mean ? mean_action(policy, s)
                          : sample_action(policy, s, rng).action;
    const Transition t = env.step(a);
    total += t.reward;
    ++*steps;
    if (trace) trace->push_back(t.reward);
    if (t.done) break;
    s = t.next_state;
  }
  return total;
}

std::string csv_number(double x) {
  if (std::isnan(x)) return "nan";
  std::ostringstream os;
  os << std::setprecision(17) << x;
  return os.str();
}

}  // namespace

EvalGrid EvalGrid::linspace(const std::string& name, double lo, double hi,
                            int n, int episodes, int max_len) {
  if (n < 1) throw InvalidArgument("grid needs at least one point");
  EvalGrid g;
  g.axes.push_back({name, even_values(lo, hi, n)});
  g.episodes_per_point = episodes;
  g.max_episode_len = max_len;
  return g;
}

EvalGrid EvalGrid::default_for(EnvFamily family) {
  switch (family) {
    case EnvFamily::kCartPole:
      return linspace("pole_length", 0.3, 3.0, 28);
    case EnvFamily::kPendulum: {
      EvalGrid g;
      g.axes = {{"length", even_values(0.5, 2.0, 6)},
                {"mass", even_values(0.5, 2.0, 6)}};
      g.max_episode_len = 200;
      return g;
    }
    case EnvFamily::kQuadTestbed:
      return linspace("phi0", -1.0, 1.0, 11, 1, 1);
  }
  throw InvalidArgument("unknown family");
}

void EvalGrid::validate(const ParamVector& reference) const {
  if (episodes_per_point < 1) {
    throw InvalidArgument("episodes_per_point must be >= 1");
  }
  if (max_episode_len < 1) throw InvalidArgument("max_episode_len must be >= 1");
  std::vector<std::string> seen;
  for (const GridAxis& axis : axes) {
    const Eigen::Index i = index_of(reference, axis.name);
    if (std::find(seen.begin(), seen.end(), axis.name) != seen.end()) {
      throw InvalidArgument("grid axis '" + axis.name + "' appears twice");
    }
    seen.push_back(axis.name);
    if (axis.values.empty()) {
      throw InvalidArgument("grid axis '" + axis.name + "' has no values");
    }
    for (double v : axis.values) {
      Vec x = reference.values();
      x[i] = v;
      if (!reference.with_values(x).is_valid()) {
        throw PhysicalBoundsError("grid value " + csv_number(v) + " for '" +
                                  axis.name + "' is outside physical bounds");
      }
    }
  }
}

std::vector<ParamVector> EvalGrid::points(const ParamVector& reference) const {
  validate(reference);
  std::vector<Eigen::Index> dims;
  std::size_t total = 1;
  for (const GridAxis& axis : axes) {
    dims.push_back(index_of(reference, axis.name));
    total *= axis.values.size();
  }
  std::vector<ParamVector> out;
  out.reserve(total);
  for (std::size_t flat = 0; flat < total; ++flat) {
    Vec x = reference.values();
    std::size_t rest = flat;
    for (std::size_t a = axes.size(); a-- > 0;) {
      const std::size_t n = axes[a].values.size();
      x[dims[a]] = axes[a].values[rest % n];
      rest /= n;
    }
    out.push_back(reference.with_values(std::move(x)));
  }
  return out;
}

std::vector<ParamVector> sample_uniform_points(const ParamVector& reference,
                                               int n, std::uint64_t seed) {
  if (!reference.has_bounds()) {
    throw InvalidArgument("uniform sampling needs declared bounds");
  }
  if (n < 1) throw InvalidArgument("need at least one point");
  Rng rng(seed);
  std::vector<ParamVector> out;
  for (int k = 0; k < n; ++k) {
    Vec x(reference.dim());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const Bounds& b = reference.bounds()[static_cast<std::size_t>(i)];
      x[i] = rng.uniform(b.lo, b.hi);
    }
    out.push_back(reference.with_values(std::move(x)));
  }
  return out;
}

double EvalReport::worst_case() const {
  double w = std::numeric_limits<double>::infinity();
  for (const EvalRow& r : rows) {
    if (!r.failed) w = std::min(w, r.return_mean);
  }
  return w;
}

void EvalReport::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << "# family=" << family << "\n# checkpoint=" << checkpoint
      << "\n# seed=" << seed << "\n# epsilon=" << csv_number(epsilon)
      << "\n# action=" << (mean_action ? "mean" : "stochastic") << "\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].failed) {
      out << "# failed_point=" << i << " " << rows[i].error << "\n";
    }
  }
  bool first = true;
  for (const std::string& n : param_names) {
    out << (first ? "" : ",") << "param:" << n;
    first = false;
  }
  out << ",return_mean,return_std,n_episodes\n";
  for (const EvalRow& r : rows) {
    for (Eigen::Index i = 0; i < r.params.size(); ++i) {
      out << (i ? "," : "") << csv_number(r.params[i]);
    }
    out << "," << csv_number(r.return_mean) << "," << csv_number(r.return_std)
        << "," << r.n_episodes << "\n";
  }
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

EvalReport EvalReport::read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read '" + path.string() + "'");
  EvalReport rep;
  std::string line;
  bool header = false;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fail = [&](const std::string& why) {
      throw Error(path.string() + ":" + std::to_string(line_no) + ": " + why);
    };
    if (line[0] == '#') {
      const std::string body = line.substr(std::min<std::size_t>(2, line.size()));
      const auto eq = body.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = body.substr(0, eq), val = body.substr(eq + 1);
      if (key == "family") rep.family = val;
      else if (key == "checkpoint") rep.checkpoint = val;
      else if (key == "seed") rep.seed = std::stoull(val);
      else if (key == "epsilon") rep.epsilon = std::stod(val);
      else if (key == "action") rep.mean_action = val == "mean";
      else if (key == "failed_point") {
        const auto sp = val.find(' ');
        const std::size_t idx = std::stoul(val.substr(0, sp));
        if (rep.rows.size() <= idx) rep.rows.resize(idx + 1);
        rep.rows[idx].failed = true;
        rep.rows[idx].error = sp == std::string::npos ? "" : val.substr(sp + 1);
      }
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    if (!header) {
      if (cells.size() < 4) fail("header has too few columns");
      for (std::size_t i = 0; i + 3 < cells.size(); ++i) {
        if (cells[i].rfind("param:", 0) != 0) fail("expected param:<name>");
        rep.param_names.push_back(cells[i].substr(6));
      }
      header = true;
      continue;
    }
    const std::size_t d = rep.param_names.size();
    if (cells.size() != d + 3) fail("wrong number of columns");
    EvalRow row;
    row.params.resize(static_cast<Eigen::Index>(d));
    try {
      for (std::size_t i = 0; i < d; ++i) {
        row.params[static_cast<Eigen::Index>(i)] = std::stod(cells[i]);
      }
      row.return_mean = std::stod(cells[d]);
      row.return_std = std::stod(cells[d + 1]);
      row.n_episodes = std::stoi(cells[d + 2]);
    } catch (const std::exception&) {
      fail("malformed number");
    }
    // Rows of failed points were pre-created from the metadata.
    std::size_t slot = 0;
    while (slot < rep.rows.size() && rep.rows[slot].params.size() != 0) ++slot;
    if (slot == rep.rows.size()) rep.rows.emplace_back();
    row.failed = rep.rows[slot].failed;
    row.error = rep.rows[slot].error;
    rep.rows[slot] = std::move(row);
  }
  if (!header) throw Error(path.string() + ": missing header");
  return rep;
}

EvalReport evaluate_points(const Policy& policy, EnvFamily family,
                           const std::vector<ParamVector>& points,
                           int episodes_per_point, int max_episode_len,
                           std::uint64_t seed, const EvalOptions& options) {
  if (episodes_per_point < 1) {
    throw InvalidArgument("episodes_per_point must be >= 1");
  }
  if (max_episode_len < 1) throw InvalidArgument("max_episode_len must be >= 1");
  if (!(options.audit_fraction >= 0.0 && options.audit_fraction <= 1.0)) {
    throw InvalidArgument("audit_fraction must be in [0, 1]");
  }
  EvalReport rep;
  rep.family = std::string(to_string(family));
  rep.param_names = reference_params(family, options.env).names();
  rep.checkpoint = options.checkpoint;
  rep.seed = seed;
  rep.epsilon = options.epsilon;
  rep.mean_action = options.mean_action;
  rep.rows.resize(points.size());

  EnvOptions env_opts = options.env;
  env_opts.max_steps = max_episode_len;
  std::vector<int> audited(points.size(), 0), mismatched(points.size(), 0);
  // Audit selection uses its own hash so it never perturbs the episodes.

  parallel_for(points.size(), options.jobs, [&](std::size_t i) {
    EvalRow& row = rep.rows[i];
    row.params = points[i].values();
    try {
      EnvHandle env = make_env(family, points[i], stream_seed(seed, i, 0), env_opts);
      Rng rng(stream_seed(seed, i, 1));
      std::vector<double> returns;
      for (int e = 0; e < episodes_per_point; ++e) {
        const bool audit =
            options.audit_fraction > 0.0 &&
            std::ldexp(static_cast<double>(stream_seed(
                           seed, i, 2, static_cast<std::uint64_t>(e))),
                       -64) < options.audit_fraction;
        std::vector<double> trace;
        int steps = 0;
        const double ret = run_episode(policy, *env, rng, options.mean_action,
                                       audit ? &trace : nullptr, &steps);
        if (audit) {
          ++audited[i];
          double sum = 0.0;
          for (double r : trace) sum += r;
          if (sum != ret || static_cast<int>(trace.size()) != steps) {
            ++mismatched[i];
          }
        }
        returns.push_back(ret);
      }
      double mean = 0.0;
      for (double r : returns) mean += r;
      mean /= static_cast<double>(returns.size());
      double var = 0.0;
      for (double r : returns) var += (r - mean) * (r - mean);
      row.return_mean = mean;
      row.return_std =
          returns.size() > 1 ? std::sqrt(var / static_cast<double>(returns.size() - 1))
                             : 0.0;
      row.n_episodes = static_cast<int>(returns.size());
      if (!std::isfinite(mean)) throw NumericalError("non-finite return");
    } catch (const Error& e) {
      row.failed = true;
      row.error = e.what();
      row.return_mean = std::numeric_limits<double>::quiet_NaN();
      row.return_std = std::numeric_limits<double>::quiet_NaN();
      row.n_episodes = 0;
    }
  });
  for (std::size_t i = 0; i < points.size(); ++i) {
    rep.audited_episodes += audited[i];
    rep.audit_mismatches += mismatched[i];
  }
  return rep;
}

EvalReport evaluate_grid(const Policy& policy, EnvFamily family,
                         const EvalGrid& grid, std::uint64_t seed,
                         const EvalOptions& options) {
  const ParamVector ref = reference_params(family, options.env);
  return evaluate_points(policy, family, grid.points(ref),
                         grid.episodes_per_point, grid.max_episode_len, seed,
                         options);
}

Comparison compare_policies(const std::vector<EvalReport>& reports,
                            double tie_tolerance) {
  if (reports.empty()) throw InvalidArgument("no reports to compare");
  const EvalReport& base = reports.front();
  for (const EvalReport& r : reports) {
    if (r.rows.size() != base.rows.size() || r.param_names != base.param_names) {
      throw DimensionMismatch("reports were produced on different grids");
    }
    for (std::size_t i = 0; i < r.rows.size(); ++i) {
      if (r.rows[i].params != base.rows[i].params) {
        throw DimensionMismatch("reports disagree at grid point " +
                                std::to_string(i));
      }
    }
  }
  const std::size_t m = reports.size();
  Comparison out;
  out.wins.assign(m, 0);
  for (std::size_t i = 0; i < base.rows.size(); ++i) {
    PointComparison pc;
    pc.params = base.rows[i].params;
    bool any_failed = false;
    for (const EvalReport& r : reports) {
      pc.returns.push_back(r.rows[i].return_mean);
      any_failed = any_failed || r.rows[i].failed;
    }
    if (!any_failed) {
      const auto best = std::max_element(pc.returns.begin(), pc.returns.end());
      int leaders = 0;
      for (double v : pc.returns) leaders += (*best - v <= tie_tolerance);
      if (leaders == 1) {
        pc.winner = static_cast<int>(best - pc.returns.begin());
        ++out.wins[static_cast<std::size_t>(pc.winner)];
      } else {
        ++out.ties;
      }
    }
    out.points.push_back(std::move(pc));
  }
  const bool one_axis = base.rows.size() > 1 && [&] {
    // A single varying coordinate makes the trapezoid well defined.
    int varying = 0;
    for (Eigen::Index d = 0; d < base.rows[0].params.size(); ++d) {
      bool moves = false;
      for (const EvalRow& r : base.rows) moves = moves || r.params[d] != base.rows[0].params[d];
      varying += moves;
    }
    return varying == 1;
  }();
  for (const EvalReport& r : reports) {
    out.worst_case.push_back(r.worst_case());
    double area = 0.0;
    if (one_axis) {
      Eigen::Index d = 0;
      while (r.rows[0].params[d] == r.rows[1].params[d]) ++d;
      for (std::size_t i = 1; i < r.rows.size(); ++i) {
        const EvalRow& a = r.rows[i - 1];
        const EvalRow& b = r.rows[i];
        if (a.failed || b.failed) continue;
        area += 0.5 * (a.return_mean + b.return_mean) *
                std::abs(b.params[d] - a.params[d]);
      }
    } else {
      int n = 0;
      for (const EvalRow& row : r.rows) {
        if (row.failed) continue;
        area += row.return_mean;
        ++n;
      }
      area = n > 0 ? area / n : 0.0;
    }
    out.auc.push_back(area);
  }
  return out;
}

}  // namespace wr2l
