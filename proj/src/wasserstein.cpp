#include "wr2l/wasserstein.hpp"

#include "wr2l/binary_io.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <sstream>

namespace wr2l {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double sq_dist(const Mat& xs, Eigen::Index i, const Mat& ys, Eigen::Index j) {
  return (xs.col(i) - ys.col(j)).squaredNorm();
}

void require_same_point_dim(const Mat& xs, const Mat& ys) {
  if (xs.rows() != ys.rows()) {
    throw DimensionMismatch("point dimension " + std::to_string(xs.rows()) +
                            " vs " + std::to_string(ys.rows()));
  }
  if (xs.cols() == 0 || ys.cols() == 0) {
    throw InvalidArgument("empty point set");
  }
}

// Shortest-augmenting-path assignment on a sparse arc set with row duals u
// and column duals v. Invariant on every arc: c_ij - u_i - v_j >= 0, with
// equality on matched arcs.
class SparseAssignment {
 public:
  SparseAssignment(const Mat& xs, const Mat& ys)
      : xs_(xs),
        ys_(ys),
        n_(static_cast<int>(xs.cols())),
        adj_(static_cast<std::size_t>(n_)),
        u_(Vec::Zero(n_)),
        v_(Vec::Zero(n_)),
        row_match_(static_cast<std::size_t>(n_), -1),
        col_match_(static_cast<std::size_t>(n_), -1),
        dist_(static_cast<std::size_t>(n_), kInf),
        pred_(static_cast<std::size_t>(n_), -1),
        done_(static_cast<std::size_t>(n_), 0) {
    double max_cost = 0.0;
    for (int i = 0; i < std::min(n_, 64); ++i) {
      for (int j = 0; j < std::min(n_, 64); ++j) {
        max_cost = std::max(max_cost, cost(i, j));
      }
    }
    tol_ = 1e-12 * (1.0 + max_cost);
  }

  std::vector<int> solve() {
    const AffineMap map = fit_gaussian_map(xs_, ys_);
    seed_candidates(map);
    warm_start(map);
    for (;;) {
      for (int i = 0; i < n_; ++i) {
        if (row_match_[static_cast<std::size_t>(i)] < 0) augment(i);
      }
      if (!grow_violations()) break;
    }
    return row_match_;
  }

 private:
  double cost(int i, int j) const { return sq_dist(xs_, i, ys_, j); }
  double reduced(int i, int j) const {
    return std::max(0.0, cost(i, j) - u_[i] - v_[j]);
  }

  void add_arc(int i, int j) {
    auto& row = adj_[static_cast<std::size_t>(i)];
    if (std::find(row.begin(), row.end(), j) == row.end()) row.push_back(j);
  }

  // y ≈ my + A (x − mx): the optimal map between Gaussian fits of the two
  // clouds. A is symmetric positive definite, so the map is the gradient of
  // the convex ψ(x) = ½ (x − mx)ᵀA(x − mx) + myᵀx.
  struct AffineMap {
    Vec mx, my;
    Mat a, a_inv;
    double psi(const Vec& x) const {
      const Vec d = x - mx;
      return 0.5 * d.dot(a * d) + my.dot(x);
    }
    // Legendre conjugate ψ*(y) = xᵀy − ψ(x) at x = ∇ψ⁻¹(y).
    double psi_conj(const Vec& y) const {
      const Vec x = mx + a_inv * (y - my);
      return x.dot(y) - psi(x);
    }
  };

  static AffineMap fit_gaussian_map(const Mat& xs, const Mat& ys) {
    AffineMap m;
    m.mx = xs.rowwise().mean();
    m.my = ys.rowwise().mean();
    const Eigen::Index d = xs.rows();
    m.a = Mat::Identity(d, d);
    m.a_inv = Mat::Identity(d, d);
    const Mat cx = xs.colwise() - m.mx;
    const Mat cy = ys.colwise() - m.my;
    const Mat sx = cx * cx.transpose() / static_cast<double>(xs.cols());
    const Mat sy = cy * cy.transpose() / static_cast<double>(ys.cols());
    Eigen::SelfAdjointEigenSolver<Mat> ex(sx), ey(sy);
    auto well_posed = [](const Eigen::SelfAdjointEigenSolver<Mat>& e) {
      return e.info() == Eigen::Success &&
             e.eigenvalues().minCoeff() >
                 1e-10 * (1e-300 + e.eigenvalues().maxCoeff());
    };
    if (!well_posed(ex) || !well_posed(ey)) return m;
    const Mat root = ex.operatorSqrt();
    const Mat inv_root = ex.operatorInverseSqrt();
    Mat mid = root * sy * root;
    mid = 0.5 * (mid + mid.transpose());
    Eigen::SelfAdjointEigenSolver<Mat> em(mid);
    if (em.info() != Eigen::Success || em.eigenvalues().minCoeff() <= 0.0) {
      return m;
    }
    Mat a = inv_root * em.operatorSqrt() * inv_root;
    a = 0.5 * (a + a.transpose());
    Eigen::SelfAdjointEigenSolver<Mat> ea(a);
    if (ea.info() != Eigen::Success || ea.eigenvalues().minCoeff() <= 0.0) {
      return m;
    }
    m.a = a;
    m.a_inv = ea.operatorInverseSqrt() * ea.operatorInverseSqrt();
    return m;
  }

  // k nearest targets of each mapped source, plus the identity arcs so that
  // a perfect matching always exists.
  void seed_candidates(const AffineMap& map) {
    const int k = n_ <= 64 ? n_ : 16;
    if (k == n_) {
      for (int i = 0; i < n_; ++i) {
        for (int j = 0; j < n_; ++j) add_arc(i, j);
      }
      return;
    }
    const Mat probes = (map.a * (xs_.colwise() - map.mx)).colwise() + map.my;
    const Eigen::Index dim = xs_.rows();
    // Sorted top-k by bounded insertion; most targets fail the first test.
    std::vector<std::pair<double, int>> top;
    top.reserve(static_cast<std::size_t>(k) + 1);
    for (int i = 0; i < n_; ++i) {
      const double* p = probes.col(i).data();
      top.clear();
      double worst = kInf;
      const double* y = ys_.data();
      for (int j = 0; j < n_; ++j, y += dim) {
        double d2 = 0.0;
        for (Eigen::Index q = 0; q < dim; ++q) {
          const double diff = p[q] - y[q];
          d2 += diff * diff;
        }
        if (d2 >= worst) continue;
        auto pos = std::upper_bound(top.begin(), top.end(),
                                    std::pair<double, int>{d2, j});
        top.insert(pos, {d2, j});
        if (static_cast<int>(top.size()) > k) top.pop_back();
        if (static_cast<int>(top.size()) == k) worst = top.back().first;
      }
      for (const auto& [d2, j] : top) add_arc(i, j);
      add_arc(i, i);
    }
  }

  // Column duals from the conjugate potential: by Fenchel–Young,
  // ‖x‖² − 2ψ(x) + ‖y‖² − 2ψ*(y) ≤ ‖x − y‖² for every pair, so the start is
  // globally feasible and nearly tight along the fitted map. Rows then take
  // their best arc and a greedy matching on tight arcs.
  void warm_start(const AffineMap& map) {
    for (int j = 0; j < n_; ++j) {
      const Vec y = ys_.col(j);
      v_[j] = y.squaredNorm() - 2.0 * map.psi_conj(y);
    }
    if (!v_.allFinite()) v_.setZero();
    for (int i = 0; i < n_; ++i) {
      double best = kInf;
      int best_j = -1;
      for (int j : adj_[static_cast<std::size_t>(i)]) {
        const double r = cost(i, j) - v_[j];
        if (r < best) best = r, best_j = j;
      }
      u_[i] = best;
      if (col_match_[static_cast<std::size_t>(best_j)] < 0) {
        row_match_[static_cast<std::size_t>(i)] = best_j;
        col_match_[static_cast<std::size_t>(best_j)] = i;
      }
    }
  }

  void augment(int source) {
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    touched_.clear();
    finalized_.clear();
    auto relax = [&](int j, double d, int row) {
      auto& dj = dist_[static_cast<std::size_t>(j)];
      if (dj == kInf) touched_.push_back(j);
      if (d < dj) {
        dj = d;
        pred_[static_cast<std::size_t>(j)] = row;
        heap.emplace(d, j);
      }
    };
    for (int j : adj_[static_cast<std::size_t>(source)]) relax(j, reduced(source, j), source);

    int sink = -1;
    double delta = 0.0;
    while (!heap.empty()) {
      const auto [d, j] = heap.top();
      heap.pop();
      if (done_[static_cast<std::size_t>(j)] || d > dist_[static_cast<std::size_t>(j)]) continue;
      done_[static_cast<std::size_t>(j)] = 1;
      finalized_.push_back(j);
      const int row = col_match_[static_cast<std::size_t>(j)];
      if (row < 0) {
        sink = j;
        delta = d;
        break;
      }
      for (int j2 : adj_[static_cast<std::size_t>(row)]) {
        if (!done_[static_cast<std::size_t>(j2)]) relax(j2, d + reduced(row, j2), row);
      }
    }
    if (sink < 0) throw NumericalError("assignment: no augmenting path");

    // Potential update keeps every arc feasible and makes the path tight.
    u_[source] += delta;
    for (int j : finalized_) {
      const double dj = dist_[static_cast<std::size_t>(j)];
      v_[j] += dj - delta;
      const int row = col_match_[static_cast<std::size_t>(j)];
      if (row >= 0) u_[row] += delta - dj;
    }
    for (int j = sink;;) {
      const int row = pred_[static_cast<std::size_t>(j)];
      const int prev = row_match_[static_cast<std::size_t>(row)];
      row_match_[static_cast<std::size_t>(row)] = j;
      col_match_[static_cast<std::size_t>(j)] = row;
      if (row == source) break;
      j = prev;
    }
    for (int j : touched_) {
      dist_[static_cast<std::size_t>(j)] = kInf;
      done_[static_cast<std::size_t>(j)] = 0;
      pred_[static_cast<std::size_t>(j)] = -1;
    }
  }

  // Checks dual feasibility over all n² pairs. Rows with violated pairs get
  // those arcs, a lowered dual and, if their match is no longer tight, are
  // released for re-augmentation. Returns false when the certificate holds.
  //
  // Reduced costs are screened through ‖x‖² − 2xᵀy + (‖y‖² − v) and
  // confirmed with the exact cost.
  bool grow_violations() {
    bool any = false;
    const Eigen::Index dim = xs_.rows();
    const Vec w = ys_.colwise().squaredNorm().transpose() - v_;
    std::vector<std::pair<double, int>> bad;
    for (int i = 0; i < n_; ++i) {
      const double* x = xs_.col(i).data();
      const double screen = u_[i] - xs_.col(i).squaredNorm() - 0.5 * tol_;
      bad.clear();
      const double* y = ys_.data();
      for (int j = 0; j < n_; ++j, y += dim) {
        double dot = 0.0;
        for (Eigen::Index k = 0; k < dim; ++k) dot += x[k] * y[k];
        if (w[j] - 2.0 * dot < screen) {
          const double red = cost(i, j) - u_[i] - v_[j];
          if (red < -tol_) bad.emplace_back(red, j);
        }
      }
      if (bad.empty()) continue;
      any = true;
      constexpr std::size_t kMaxNew = 32;
      if (bad.size() > kMaxNew) {
        std::nth_element(bad.begin(), bad.begin() + kMaxNew, bad.end());
        bad.resize(kMaxNew);
      }
      for (const auto& [red, j] : bad) add_arc(i, j);
      double lowest = kInf;
      for (int j : adj_[static_cast<std::size_t>(i)]) {
        lowest = std::min(lowest, cost(i, j) - v_[j]);
      }
      u_[i] = lowest;
      const int j = row_match_[static_cast<std::size_t>(i)];
      if (j >= 0 && cost(i, j) - u_[i] - v_[j] > tol_) {
        row_match_[static_cast<std::size_t>(i)] = -1;
        col_match_[static_cast<std::size_t>(j)] = -1;
      }
    }
    return any;
  }

  const Mat& xs_;
  const Mat& ys_;
  int n_;
  double tol_ = 0.0;
  std::vector<std::vector<int>> adj_;
  Vec u_, v_;
  std::vector<int> row_match_, col_match_;
  std::vector<double> dist_;
  std::vector<int> pred_;
  std::vector<char> done_;
  std::vector<int> touched_, finalized_;
};

}  // namespace

namespace detail {

double canonical_mean(std::vector<double> terms, double denominator) {
  std::sort(terms.begin(), terms.end());
  double sum = 0.0, comp = 0.0;
  for (double t : terms) {
    const double next = sum + t;
    comp += std::abs(sum) >= std::abs(t) ? (sum - next) + t : (t - next) + sum;
    sum = next;
  }
  return (sum + comp) / denominator;
}

}  // namespace detail

// ---------------------------------------------------------------------------

EmpiricalDist::EmpiricalDist(std::vector<Vec> points)
    : points_(std::move(points)) {
  if (points_.empty()) throw InvalidArgument("empirical distribution is empty");
  const auto d = points_.front().size();
  if (d == 0) throw InvalidArgument("empirical distribution has 0-dim points");
  for (const auto& p : points_) {
    if (p.size() != d) {
      throw DimensionMismatch("empirical distribution mixes point dimensions");
    }
  }
}

EmpiricalDist EmpiricalDist::from_scalars(const std::vector<double>& xs) {
  std::vector<Vec> pts;
  pts.reserve(xs.size());
  for (double x : xs) pts.push_back(Vec::Constant(1, x));
  return EmpiricalDist(std::move(pts));
}

Mat EmpiricalDist::as_matrix() const {
  Mat m(dim(), static_cast<Eigen::Index>(size()));
  for (std::size_t i = 0; i < size(); ++i) {
    m.col(static_cast<Eigen::Index>(i)) = points_[i];
  }
  return m;
}

std::vector<int> solve_assignment(const Mat& xs, const Mat& ys) {
  require_same_point_dim(xs, ys);
  if (xs.cols() != ys.cols()) {
    throw InvalidArgument("assignment needs equal point counts");
  }
  if (xs.cols() == 1) return {0};
  return SparseAssignment(xs, ys).solve();
}

OptimalTransport solve_transport(const Mat& xs, const Mat& ys) {
  require_same_point_dim(xs, ys);
  const int n = static_cast<int>(xs.cols());
  const int m = static_cast<int>(ys.cols());
  const long g = std::gcd(static_cast<long>(n), static_cast<long>(m));
  const long supply_each = m / g;
  const long demand_each = n / g;
  const double total = static_cast<double>(n) * m / static_cast<double>(g);

  Mat cost(n, m);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) cost(i, j) = sq_dist(xs, i, ys, j);
  }

  std::vector<long> supply(static_cast<std::size_t>(n), supply_each);
  std::vector<long> demand(static_cast<std::size_t>(m), demand_each);
  Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic> flow =
      Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic>::Zero(n, m);
  // Node potentials: rows then columns. Reduced cost of row->col arc is
  // c_ij + pr_i - pc_j >= 0; backward arcs (flow > 0) are tight.
  Vec pr = Vec::Zero(n), pc = Vec::Zero(m);
  long remaining = static_cast<long>(n) * supply_each;

  std::vector<double> dr(static_cast<std::size_t>(n)), dc(static_cast<std::size_t>(m));
  std::vector<char> vr(static_cast<std::size_t>(n)), vc(static_cast<std::size_t>(m));
  std::vector<int> pred_row_of_col(static_cast<std::size_t>(m)), pred_col_of_row(static_cast<std::size_t>(n));

  while (remaining > 0) {
    std::fill(vr.begin(), vr.end(), 0);
    std::fill(vc.begin(), vc.end(), 0);
    for (int i = 0; i < n; ++i) {
      dr[static_cast<std::size_t>(i)] = supply[static_cast<std::size_t>(i)] > 0 ? 0.0 : kInf;
      pred_col_of_row[static_cast<std::size_t>(i)] = -1;
    }
    std::fill(dc.begin(), dc.end(), kInf);
    int target = -1;
    double target_dist = kInf;
    for (;;) {
      int best = -1;
      bool best_is_row = true;
      double best_d = kInf;
      for (int i = 0; i < n; ++i) {
        if (!vr[static_cast<std::size_t>(i)] && dr[static_cast<std::size_t>(i)] < best_d) {
          best_d = dr[static_cast<std::size_t>(i)], best = i, best_is_row = true;
        }
      }
      for (int j = 0; j < m; ++j) {
        if (!vc[static_cast<std::size_t>(j)] && dc[static_cast<std::size_t>(j)] < best_d) {
          best_d = dc[static_cast<std::size_t>(j)], best = j, best_is_row = false;
        }
      }
      if (best < 0) break;
      if (best_is_row) {
        vr[static_cast<std::size_t>(best)] = 1;
        for (int j = 0; j < m; ++j) {
          if (vc[static_cast<std::size_t>(j)]) continue;
          const double r = std::max(0.0, cost(best, j) + pr[best] - pc[j]);
          if (best_d + r < dc[static_cast<std::size_t>(j)]) {
            dc[static_cast<std::size_t>(j)] = best_d + r;
            pred_row_of_col[static_cast<std::size_t>(j)] = best;
          }
        }
      } else {
        vc[static_cast<std::size_t>(best)] = 1;
        if (demand[static_cast<std::size_t>(best)] > 0) {
          target = best;
          target_dist = best_d;
          break;
        }
        for (int i = 0; i < n; ++i) {
          if (vr[static_cast<std::size_t>(i)] || flow(i, best) == 0) continue;
          const double r = std::max(0.0, -cost(i, best) + pc[best] - pr[i]);
          if (best_d + r < dr[static_cast<std::size_t>(i)]) {
            dr[static_cast<std::size_t>(i)] = best_d + r;
            pred_col_of_row[static_cast<std::size_t>(i)] = best;
          }
        }
      }
    }
    if (target < 0) throw NumericalError("transport: no augmenting path");

    for (int i = 0; i < n; ++i) pr[i] += std::min(dr[static_cast<std::size_t>(i)], target_dist);
    for (int j = 0; j < m; ++j) pc[j] += std::min(dc[static_cast<std::size_t>(j)], target_dist);

    // Bottleneck along the alternating path.
    long push = demand[static_cast<std::size_t>(target)];
    int j = target;
    int source = -1;
    for (;;) {
      const int i = pred_row_of_col[static_cast<std::size_t>(j)];
      const int back = pred_col_of_row[static_cast<std::size_t>(i)];
      if (back < 0) {
        source = i;
        break;
      }
      push = std::min(push, flow(i, back));
      j = back;
    }
    push = std::min(push, supply[static_cast<std::size_t>(source)]);
    for (j = target;;) {
      const int i = pred_row_of_col[static_cast<std::size_t>(j)];
      flow(i, j) += push;
      const int back = pred_col_of_row[static_cast<std::size_t>(i)];
      if (back < 0) break;
      flow(i, back) -= push;
      j = back;
    }
    supply[static_cast<std::size_t>(source)] -= push;
    demand[static_cast<std::size_t>(target)] -= push;
    remaining -= push;
  }

  OptimalTransport out;
  out.coupling.kappa = flow.cast<double>() / total;
  std::vector<double> terms;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      if (flow(i, j) > 0) terms.push_back(static_cast<double>(flow(i, j)) * cost(i, j));
    }
  }
  out.cost = detail::canonical_mean(std::move(terms), total);
  return out;
}

OptimalTransport optimal_coupling(const EmpiricalDist& mu,
                                  const EmpiricalDist& nu) {
  const Mat xs = mu.as_matrix();
  const Mat ys = nu.as_matrix();
  require_same_point_dim(xs, ys);
  if (mu.size() != nu.size()) return solve_transport(xs, ys);

  const auto match = solve_assignment(xs, ys);
  const auto n = static_cast<Eigen::Index>(mu.size());
  OptimalTransport out;
  out.coupling.kappa = Mat::Zero(n, n);
  std::vector<double> terms;
  terms.reserve(match.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const int j = match[static_cast<std::size_t>(i)];
    out.coupling.kappa(i, j) = 1.0 / static_cast<double>(n);
    terms.push_back(sq_dist(xs, i, ys, j));
  }
  out.cost = detail::canonical_mean(std::move(terms), static_cast<double>(n));
  return out;
}

double w2_squared_empirical(const EmpiricalDist& mu, const EmpiricalDist& nu) {
  if (mu.dim() != nu.dim()) {
    throw DimensionMismatch("point dimension " + std::to_string(mu.dim()) +
                            " vs " + std::to_string(nu.dim()));
  }
  if (mu.size() == 1 && nu.size() == 1) {
    return (mu.points()[0] - nu.points()[0]).squaredNorm();
  }
  const Mat xs = mu.as_matrix();
  const Mat ys = nu.as_matrix();
  if (mu.size() != nu.size()) return solve_transport(xs, ys).cost;
  const auto match = solve_assignment(xs, ys);
  std::vector<double> terms;
  terms.reserve(match.size());
  for (std::size_t i = 0; i < match.size(); ++i) {
    terms.push_back(sq_dist(xs, static_cast<Eigen::Index>(i), ys, match[i]));
  }
  return detail::canonical_mean(std::move(terms),
                                static_cast<double>(match.size()));
}

double w2_squared_1d(const EmpiricalDist& mu, const EmpiricalDist& nu) {
  if (mu.dim() != 1 || nu.dim() != 1) {
    throw DimensionMismatch("w2_squared_1d needs scalar points");
  }
  if (mu.size() != nu.size()) return w2_squared_empirical(mu, nu);
  std::vector<double> a, b;
  a.reserve(mu.size());
  b.reserve(nu.size());
  for (const auto& p : mu.points()) a.push_back(p[0]);
  for (const auto& p : nu.points()) b.push_back(p[0]);
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::vector<double> terms(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    terms[i] = d * d;
  }
  return detail::canonical_mean(std::move(terms), static_cast<double>(a.size()));
}

Mat psd_sqrt(const Mat& m) {
  if (m.rows() != m.cols()) throw DimensionMismatch("matrix is not square");
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if (!m.allFinite() || (m - m.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale) {
    throw NumericalError("covariance is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Mat> eig(0.5 * (m + m.transpose()));
  Vec values = eig.eigenvalues();
  if (values.minCoeff() < -1e-9 * scale) {
    throw NumericalError("covariance is not positive semidefinite");
  }
  values = values.cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose();
}

double w2_squared_gaussian(const Vec& mean1, const Mat& cov1, const Vec& mean2,
                           const Mat& cov2) {
  const auto d = mean1.size();
  if (mean2.size() != d || cov1.rows() != d || cov2.rows() != d) {
    throw DimensionMismatch("gaussian dimensions differ");
  }
  const Mat root1 = psd_sqrt(cov1);
  const Mat root2 = psd_sqrt(cov2);
  Mat inner = root2 * root1 * root1 * root2;
  inner = 0.5 * (inner + inner.transpose()).eval();
  const Mat cross = psd_sqrt(inner);
  const double tr = cov1.trace() + cov2.trace() - 2.0 * cross.trace();
  return (mean1 - mean2).squaredNorm() + std::max(0.0, tr);
}

// ---------------------------------------------------------------------------

StateActionBucket build_bucket(EnvFamily family, const ParamVector& phi0,
                               int n_pairs, std::uint64_t seed,
                               const EnvOptions& options) {
  if (n_pairs < 1) throw InvalidArgument("bucket needs n_pairs >= 1");
  auto env = make_env(family, phi0, stream_seed(seed, 0), options);
  Rng actions(stream_seed(seed, 1));
  std::vector<StateActionPair> pool;
  while (static_cast<int>(pool.size()) < n_pairs) {
    env->reset();
    while (!env->terminated()) {
      StateActionPair pair{env->state(), env->random_action(actions)};
      env->step(pair.action);
      pool.push_back(std::move(pair));
    }
  }
  Rng picker(stream_seed(seed, 2));
  std::shuffle(pool.begin(), pool.end(), picker.engine());
  pool.resize(static_cast<std::size_t>(n_pairs));

  StateActionBucket bucket;
  bucket.family = family;
  bucket.env_options = options;
  bucket.source_params = env->params();
  bucket.seed = seed;
  bucket.pairs = std::move(pool);
  return bucket;
}

double expected_w2(const StateActionBucket& bucket, const ParamVector& phi,
                   const ParamVector& phi0, const ExpectedW2Options& options) {
  if (bucket.pairs.empty()) throw InvalidArgument("bucket is empty");
  if (options.n_next < 1) throw InvalidArgument("n_next must be >= 1");
  require_same_dim(phi, phi0);

  // Fixed chunking keeps RNG streams independent of the worker count.
  constexpr std::size_t kChunk = 64;
  const std::size_t n = bucket.pairs.size();
  const std::size_t chunks = (n + kChunk - 1) / kChunk;
  std::vector<double> per_pair(n);
  parallel_for(chunks, options.jobs, [&](std::size_t c) {
    auto env = make_env(bucket.family, phi, stream_seed(options.seed, c, 0),
                        bucket.env_options);
    auto ref = make_env(bucket.family, phi0, stream_seed(options.seed, c, 1),
                        bucket.env_options);
    const std::size_t end = std::min(n, (c + 1) * kChunk);
    for (std::size_t k = c * kChunk; k < end; ++k) {
      const auto& pair = bucket.pairs[k];
      auto xs = env->next_state_samples(pair.state, pair.action, options.n_next);
      auto ys = ref->next_state_samples(pair.state, pair.action, options.n_next);
      per_pair[k] = w2_squared_empirical(EmpiricalDist(std::move(xs)),
                                         EmpiricalDist(std::move(ys)));
    }
  });
  double sum = 0.0;
  for (double w : per_pair) {
    if (!std::isfinite(w)) throw NumericalError("non-finite Wasserstein term");
    sum += w;
  }
  return sum / static_cast<double>(n);
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::string_view kBucketMagic = "WR2L_BKT";
constexpr std::uint32_t kBucketVersion = 1;

}  // namespace

void save_bucket(const StateActionBucket& bucket,
                 const std::filesystem::path& path) {
  io::Writer w;
  w.put_string(to_string(bucket.family));
  w.put_vec(bucket.source_params.values());
  w.put<std::uint64_t>(bucket.seed);
  w.put<double>(bucket.env_options.noise_std);
  w.put<std::int32_t>(bucket.env_options.max_steps);
  w.put<std::int32_t>(bucket.env_options.quad_dim);
  w.put_mat(bucket.env_options.quad.curvature);
  w.put_vec(bucket.env_options.quad.optimum);
  w.put<double>(bucket.env_options.quad.offset);
  w.put<std::uint64_t>(bucket.pairs.size());
  for (const auto& p : bucket.pairs) {
    w.put_vec(p.state);
    if (const int* a = std::get_if<int>(&p.action)) {
      w.put<std::uint8_t>(0);
      w.put<std::int32_t>(*a);
    } else {
      w.put<std::uint8_t>(1);
      w.put_vec(std::get<Vec>(p.action));
    }
  }
  w.write_file(path, kBucketMagic, kBucketVersion);
}

StateActionBucket load_bucket(const std::filesystem::path& path) {
  auto r = io::Reader::open(path, kBucketMagic, kBucketVersion);
  StateActionBucket b;
  b.family = parse_env_family(r.get_string());
  const Vec phi0 = r.get_vec();
  b.seed = r.get<std::uint64_t>();
  b.env_options.noise_std = r.get<double>();
  b.env_options.max_steps = r.get<std::int32_t>();
  b.env_options.quad_dim = r.get<std::int32_t>();
  b.env_options.quad.curvature = r.get_mat();
  b.env_options.quad.optimum = r.get_vec();
  b.env_options.quad.offset = r.get<double>();
  b.source_params = family_params(b.family, phi0, b.env_options);
  const auto n = r.get<std::uint64_t>();
  b.pairs.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    StateActionPair p;
    p.state = r.get_vec();
    if (r.get<std::uint8_t>() == 0) {
      p.action = static_cast<int>(r.get<std::int32_t>());
    } else {
      p.action = r.get_vec();
    }
    b.pairs.push_back(std::move(p));
  }
  if (!r.at_end()) throw io::FormatError("trailing bytes in bucket file");
  return b;
}

StateActionBucket load_bucket(const std::filesystem::path& path,
                              EnvFamily family, const ParamVector& phi0,
                              std::uint64_t seed) {
  StateActionBucket b = load_bucket(path);
  if (b.family != family || b.seed != seed ||
      b.source_params.values().size() != phi0.values().size() ||
      b.source_params.values() != phi0.values()) {
    throw io::FormatError("bucket cache '" + path.string() +
                          "' was built for a different (family, phi0, seed)");
  }
  return b;
}

}  // namespace wr2l
