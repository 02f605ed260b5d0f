#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include "nsgmm/dataset.hpp"
#include "nsgmm/ivqr_brute_force.hpp"
#include "nsgmm/moments.hpp"
#include "nsgmm/weights.hpp"

namespace nsgmm {

class DegenerateArrangementError : public Error {
 public:
  using Error::Error;
};

namespace detail {

/// Swap event: lines i < j exchange order in the intercept ranking at beta.
struct SwapEvent {
  double beta;
  std::int32_t i;
  std::int32_t j;
};

/// Kinetic state of the intercept ordering c_i(beta) = y_i - beta D_i and the
/// prefix sums S_p of z over the p lowest intercepts.
///
/// A cell is the set of (alpha, beta) whose indicator vector is the prefix p
/// of the current ordering. Its criterion is constant, so the sweep stores one
/// value per prefix and only re-evaluates prefixes whose set changes. While the
/// ordering is unchanged, prefix p occupies the strip between lines order[p-1]
/// and order[p]; such a strip ("piece") is checked against the box when it
/// closes, and only if its value can still improve the running minimum.
class ArrangementSweep {
 public:
  ArrangementSweep(const Dataset& data, double tau, const Matrix& w, const ParamBox& box)
      : y_(data.outcome), d_(data.regressor), z_(data.instruments), tau_(tau), w_(w), box_(box) {
    n_ = static_cast<int>(data.size());
    order_.resize(n_);
    std::iota(order_.begin(), order_.end(), 0);
    // Ordering as beta -> -infinity: ascending D, then ascending y.
    std::sort(order_.begin(), order_.end(), [&](int a, int b) {
      if (d_(a) != d_(b)) return d_(a) < d_(b);
      if (y_(a) != y_(b)) return y_(a) < y_(b);
      return a < b;
    });
    pos_.resize(n_);
    for (int p = 0; p < n_; ++p) pos_[order_[p]] = p;
    zbar_ = z_.colwise().mean().transpose();
  }

  GmmFit run() {
    const std::vector<SwapEvent> events = build_events();
    std::size_t e = 0;
    // Events at or below the box only permute the ordering.
    while (e < events.size() && events[e].beta <= box_.lo) e = apply_group(events, e, false);
    open_all(box_.lo);
    while (e < events.size() && events[e].beta < box_.hi) e = apply_group(events, e, true);
    for (int p = 0; p <= n_; ++p) close_piece(p, box_.hi);

    if (!best_) throw Error("minimize_ivqr_sweep: box excludes every cell");
    GmmFit fit;
    fit.theta_hat = best_->representative;
    fit.q_hat = best_q_;
    fit.diagnostics.cell = *best_;
    fit.diagnostics.tied_cells = static_cast<long>(tied_.size());
    fit.diagnostics.events = events_processed_;
    fit.diagnostics.solver = "ivqr-arrangement-sweep";
    return fit;
  }

  long events_total() const { return events_processed_; }

 private:
  struct Piece {
    double start = 0.0;
    long opened_at = 0;
    long birth = 0;
  };

  std::vector<SwapEvent> build_events() const {
    std::vector<SwapEvent> ev;
    ev.reserve(static_cast<std::size_t>(n_) * (n_ - 1) / 2);
    for (int i = 0; i < n_; ++i)
      for (int j = i + 1; j < n_; ++j)
        if (d_(i) != d_(j)) ev.push_back({(y_(i) - y_(j)) / (d_(i) - d_(j)), i, j});
    std::sort(ev.begin(), ev.end(), [](const SwapEvent& a, const SwapEvent& b) {
      if (a.beta != b.beta) return a.beta < b.beta;
      if (a.i != b.i) return a.i < b.i;
      return a.j < b.j;
    });
    return ev;
  }

  double prefix_value(int p) const {
    const Eigen::Vector3d m = tau_ * zbar_ - prefix_[p] / static_cast<double>(n_);
    return m.dot(w_ * m);
  }

  void open_all(double beta) {
    prefix_.assign(n_ + 1, Eigen::Vector3d::Zero());
    for (int p = 1; p <= n_; ++p) prefix_[p] = prefix_[p - 1] + z_.row(order_[p - 1]).transpose();
    value_.resize(n_ + 1);
    pieces_.assign(n_ + 1, Piece{});
    for (int p = 0; p <= n_; ++p) {
      value_[p] = prefix_value(p);
      pieces_[p] = {beta, events_processed_, 0};
    }
    open_ = true;
  }

  // Adjacent lines with identical (y, D) bound an empty strip.
  bool empty_strip(int p) const {
    if (p == 0 || p == n_) return false;
    const int a = order_[p - 1], b = order_[p];
    return y_(a) == y_(b) && d_(a) == d_(b);
  }

  void close_piece(int p, double end) {
    const Piece& piece = pieces_[p];
    const double q = value_[p];
    const double tol = 1e-12 * std::max(1.0, best_q_);
    if (best_ && q > best_q_ + tol) return;
    if (empty_strip(p)) return;
    double lo = std::max(piece.start, box_.lo), hi = std::min(end, box_.hi);
    const int lower = p > 0 ? order_[p - 1] : -1;
    const int upper = p < n_ ? order_[p] : -1;
    // lower line below the box top somewhere: y_L - beta D_L < box.hi
    if (lower >= 0 && !restrict(lo, hi, y_(lower) - box_.hi, d_(lower), true)) return;
    // upper line above the box bottom: y_U - beta D_U > box.lo
    if (upper >= 0 && !restrict(lo, hi, y_(upper) - box_.lo, d_(upper), false)) return;
    if (!(lo < hi)) return;

    const double beta = 0.5 * (lo + hi);
    const double a_lo = lower >= 0 ? std::max(box_.lo, y_(lower) - beta * d_(lower)) : box_.lo;
    const double a_hi = upper >= 0 ? std::min(box_.hi, y_(upper) - beta * d_(upper)) : box_.hi;
    const std::pair<long, long> id{p, piece.birth};
    if (!best_ || q < best_q_ - tol) {
      best_q_ = q;
      CellDescriptor cell;
      cell.interval = piece.opened_at;
      cell.rank = p;
      cell.representative = ParamPoint(2);
      cell.representative << 0.5 * (a_lo + a_hi), beta;
      cell.lower_line = lower;
      cell.upper_line = upper;
      cell.slope_lo = lo;
      cell.slope_hi = hi;
      best_ = cell;
      tied_.assign(1, id);
    } else if (std::find(tied_.begin(), tied_.end(), id) == tied_.end()) {
      tied_.push_back(id);
    }
  }

  // Intersects (lo, hi) with {beta : c - beta * slope < 0} (below = true) or
  // {beta : c - beta * slope > 0} (below = false). Returns false when empty.
  static bool restrict(double& lo, double& hi, double c, double slope, bool below) {
    const double sign = below ? -1.0 : 1.0;  // want sign * (c - beta * slope) > 0
    if (slope == 0.0) return sign * c > 0.0;
    const double root = c / slope;
    // sign * (c - beta * slope) > 0  <=>  beta * (sign * slope) < sign * c
    if (sign * slope > 0.0)
      hi = std::min(hi, root);
    else
      lo = std::max(lo, root);
    return lo < hi;
  }

  // Processes every event sharing events[first].beta; returns the next index.
  std::size_t apply_group(const std::vector<SwapEvent>& events, std::size_t first, bool evaluate) {
    const double beta = events[first].beta;
    std::size_t last = first + 1;
    while (last < events.size() && events[last].beta == beta) ++last;
    events_processed_ += static_cast<long>(last - first);
    if (last - first == 1) {
      swap_single(events[first], beta, evaluate);
    } else {
      swap_group(events, first, last, beta, evaluate);
    }
    return last;
  }

  void swap_single(const SwapEvent& ev, double beta, bool evaluate) {
    // Before the crossing the line with the larger D sits directly above.
    const int lo_line = d_(ev.i) < d_(ev.j) ? ev.i : ev.j;
    const int hi_line = lo_line == ev.i ? ev.j : ev.i;
    const int k = pos_[lo_line];
    if (pos_[hi_line] != k + 1) throw DegenerateArrangementError("degenerate arrangement: inconsistent swap order");
    if (evaluate)
      for (int p = k; p <= std::min(k + 2, n_); ++p) close_piece(p, beta);
    std::swap(order_[k], order_[k + 1]);
    pos_[order_[k]] = k;
    pos_[order_[k + 1]] = k + 1;
    if (!open_) return;
    prefix_[k + 1] = prefix_[k] + z_.row(order_[k]).transpose();
    value_[k + 1] = prefix_value(k + 1);
    for (int p = k; p <= std::min(k + 2, n_); ++p) {
      pieces_[p].start = beta;
      pieces_[p].opened_at = events_processed_;
    }
    pieces_[k + 1].birth = events_processed_;
  }

  // Several events at one beta. Lines are grouped into concurrency classes;
  // each class must occupy consecutive ranks in ascending-D order and contain
  // one event per pair of non-parallel members. It is then reversed in D.
  void swap_group(const std::vector<SwapEvent>& events, std::size_t first, std::size_t last, double beta,
                  bool evaluate) {
    std::vector<int> lines;
    for (std::size_t e = first; e < last; ++e) {
      lines.push_back(events[e].i);
      lines.push_back(events[e].j);
    }
    std::sort(lines.begin(), lines.end());
    lines.erase(std::unique(lines.begin(), lines.end()), lines.end());
    auto local = [&](int line) {
      return static_cast<int>(std::lower_bound(lines.begin(), lines.end(), line) - lines.begin());
    };
    std::vector<int> parent(lines.size());
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](int x) {
      while (parent[x] != x) x = parent[x] = parent[parent[x]];
      return x;
    };
    for (std::size_t e = first; e < last; ++e) parent[find(local(events[e].i))] = find(local(events[e].j));
    std::vector<long> event_count(lines.size(), 0);
    for (std::size_t e = first; e < last; ++e) ++event_count[find(local(events[e].i))];

    std::vector<std::vector<int>> classes(lines.size());
    for (std::size_t k = 0; k < lines.size(); ++k) classes[find(static_cast<int>(k))].push_back(lines[k]);

    struct Block {
      int start;
      std::vector<int> members;
    };
    std::vector<Block> blocks;
    for (std::size_t r = 0; r < classes.size(); ++r) {
      auto& members = classes[r];
      if (members.empty()) continue;
      std::sort(members.begin(), members.end(), [&](int a, int b) { return pos_[a] < pos_[b]; });
      const int start = pos_[members.front()];
      long non_parallel = 0;
      for (std::size_t a = 0; a < members.size(); ++a) {
        if (pos_[members[a]] != start + static_cast<int>(a))
          throw DegenerateArrangementError("degenerate arrangement: concurrent lines not contiguous");
        if (a > 0 && d_(members[a - 1]) > d_(members[a]))
          throw DegenerateArrangementError("degenerate arrangement: concurrent lines out of order");
        for (std::size_t b = a + 1; b < members.size(); ++b)
          if (d_(members[a]) != d_(members[b])) ++non_parallel;
      }
      if (non_parallel != event_count[r])
        throw DegenerateArrangementError("degenerate arrangement: incomplete concurrency class");
      blocks.push_back({start, members});
    }

    for (const auto& block : blocks) {
      const int s = block.start, t = s + static_cast<int>(block.members.size()) - 1;
      if (evaluate)
        for (int p = s; p <= t + 1; ++p) close_piece(p, beta);
      std::vector<int> reordered = block.members;
      std::stable_sort(reordered.begin(), reordered.end(), [&](int a, int b) { return d_(a) > d_(b); });
      for (int k = s; k <= t; ++k) {
        order_[k] = reordered[k - s];
        pos_[order_[k]] = k;
      }
      if (!open_) continue;
      for (int p = s + 1; p <= t; ++p) {
        prefix_[p] = prefix_[p - 1] + z_.row(order_[p - 1]).transpose();
        value_[p] = prefix_value(p);
        pieces_[p].birth = events_processed_;
      }
      for (int p = s; p <= t + 1; ++p) {
        pieces_[p].start = beta;
        pieces_[p].opened_at = events_processed_;
      }
    }
  }

  const Vector& y_;
  const Vector& d_;
  const Matrix& z_;
  double tau_;
  Eigen::Matrix3d w_;
  ParamBox box_;
  int n_ = 0;
  Eigen::Vector3d zbar_;
  std::vector<int> order_, pos_;
  std::vector<Eigen::Vector3d> prefix_;
  std::vector<double> value_;
  std::vector<Piece> pieces_;
  bool open_ = false;
  long events_processed_ = 0;
  double best_q_ = std::numeric_limits<double>::infinity();
  std::optional<CellDescriptor> best_;
  std::vector<std::pair<long, long>> tied_;
};

}  // namespace detail

/// Exact global minimizer of the IVQR-GMM criterion over the box by a
/// topological sweep of the dual line arrangement alpha = y_i - beta D_i.
/// Degenerate arrangements (inconsistent concurrent lines) fall back to
/// brute_force_ivqr when n <= 200 and are rejected otherwise.
inline GmmFit minimize_ivqr_sweep(const Dataset& data, double tau, const WeightMatrix& weight,
                                  const ParamBox& box = {}) {
  check_ivqr_inputs(data);
  box.validate();
  if (weight.matrix.rows() != 3 || weight.matrix.cols() != 3) throw Error("IVQR weight must be 3 x 3");
  if ((data.regressor.array() == data.regressor(0)).all()) throw Error("slope unidentified: all D_i equal");
  if (data.size() > std::numeric_limits<std::int32_t>::max()) throw Error("sample too large for sweep");
  GmmFit fit;
  try {
    detail::ArrangementSweep sweep(data, tau, weight.matrix, box);
    fit = sweep.run();
    fit.q_hat = detail::ivqr_criterion_direct(data, fit.theta_hat(0), fit.theta_hat(1), tau, weight.matrix);
  } catch (const DegenerateArrangementError&) {
    if (data.size() > kBruteForceMaxN) throw;
    fit = brute_force_ivqr(data, tau, weight, box);
    fit.diagnostics.brute_force_fallback = true;
  }
  fit.weight_used = weight;
  return fit;
}

}  // namespace nsgmm
