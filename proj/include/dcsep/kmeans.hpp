#pragma once

// k-means with k-means++ seeding, Lloyd iterations refined by Hartigan
// single-point transfers, and best-of-restarts selection. Ties always resolve
// to the lower index (centre, point, restart), so results are a pure function
// of the input and the seed.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dcsep/dsp.hpp"
#include "dcsep/error.hpp"
#include "dcsep/rng.hpp"

namespace dcsep {

struct KMeansConfig {
  std::size_t k = 2;
  std::size_t restarts = 10;
  std::size_t max_iter = 100;
  double tol = 1e-6;
  std::uint64_t seed = 0;
};

struct KMeansResult {
  RowMatrixXd centres;  // k x D
  std::vector<int> assignments;
  double sse = 0.0;
  std::vector<double> sse_history;  // per Lloyd assignment step of the chosen restart
  std::size_t restart = 0;
};

// Label of the nearest centre for each row (squared Euclidean, ties to the
// lower centre index).
inline std::vector<int> assign_nearest(const RowMatrixXd& centres, const RowMatrixXd& rows) {
  if (centres.cols() != rows.cols()) {
    throw ShapeError("centres have dimension " + std::to_string(centres.cols()) + ", rows " +
                     std::to_string(rows.cols()));
  }
  std::vector<int> labels(static_cast<std::size_t>(rows.rows()));
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (Eigen::Index c = 0; c < centres.rows(); ++c) {
      const double d = (rows.row(i) - centres.row(c)).squaredNorm();
      if (d < best) {
        best = d;
        arg = static_cast<int>(c);
      }
    }
    labels[static_cast<std::size_t>(i)] = arg;
  }
  return labels;
}

namespace detail {

inline double assign_and_score(const RowMatrixXd& pts, const RowMatrixXd& centres, std::vector<int>& labels,
                               std::vector<double>& dist) {
  labels = assign_nearest(centres, pts);
  double sse = 0.0;
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    dist[static_cast<std::size_t>(i)] = (pts.row(i) - centres.row(labels[static_cast<std::size_t>(i)])).squaredNorm();
    sse += dist[static_cast<std::size_t>(i)];
  }
  return sse;
}

inline RowMatrixXd kmeanspp_seed(const RowMatrixXd& pts, std::size_t k, Rng& rng) {
  const Eigen::Index n = pts.rows();
  RowMatrixXd centres(static_cast<Eigen::Index>(k), pts.cols());
  centres.row(0) = pts.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n))));
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) d2[static_cast<std::size_t>(i)] = (pts.row(i) - centres.row(0)).squaredNorm();
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (double v : d2) total += v;
    Eigen::Index pick = 0;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += d2[static_cast<std::size_t>(i)];
        if (acc > target && d2[static_cast<std::size_t>(i)] > 0.0) {
          pick = i;
          break;
        }
      }
    }
    centres.row(static_cast<Eigen::Index>(c)) = pts.row(pick);
    for (Eigen::Index i = 0; i < n; ++i) {
      d2[static_cast<std::size_t>(i)] =
          std::min(d2[static_cast<std::size_t>(i)], (pts.row(i) - centres.row(static_cast<Eigen::Index>(c))).squaredNorm());
    }
  }
  return centres;
}

// Moves single points to another cluster whenever that strictly lowers the
// SSE of the partition (cluster means move with each transfer). Lloyd fixed
// points can still admit such moves; the reverse never holds. Returns true
// if any point moved.
inline bool hartigan_transfers(const RowMatrixXd& pts, std::vector<int>& labels, Eigen::Index k) {
  RowMatrixXd means = RowMatrixXd::Zero(k, pts.cols());
  std::vector<double> counts(static_cast<std::size_t>(k), 0.0);
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    means.row(labels[static_cast<std::size_t>(i)]) += pts.row(i);
    ++counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
  }
  for (Eigen::Index c = 0; c < k; ++c) {
    if (counts[static_cast<std::size_t>(c)] > 0.0) means.row(c) /= counts[static_cast<std::size_t>(c)];
  }
  bool any = false;
  for (bool moved = true; moved;) {
    moved = false;
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
      const int a = labels[static_cast<std::size_t>(i)];
      const double na = counts[static_cast<std::size_t>(a)];
      if (na < 2.0) continue;
      const double removal = na / (na - 1.0) * (pts.row(i) - means.row(a)).squaredNorm();
      int to = -1;
      double best = 0.0;
      for (Eigen::Index b = 0; b < k; ++b) {
        if (b == a) continue;
        const double nb = counts[static_cast<std::size_t>(b)];
        const double delta = nb / (nb + 1.0) * (pts.row(i) - means.row(b)).squaredNorm() - removal;
        if (delta < best - 1e-12 * removal) {
          best = delta;
          to = static_cast<int>(b);
        }
      }
      if (to < 0) continue;
      const double nb = counts[static_cast<std::size_t>(to)];
      means.row(a) = (means.row(a) * na - pts.row(i)) / (na - 1.0);
      means.row(to) = (means.row(to) * nb + pts.row(i)) / (nb + 1.0);
      --counts[static_cast<std::size_t>(a)];
      ++counts[static_cast<std::size_t>(to)];
      labels[static_cast<std::size_t>(i)] = to;
      moved = any = true;
    }
  }
  return any;
}

inline KMeansResult lloyd(const RowMatrixXd& pts, RowMatrixXd centres, const KMeansConfig& cfg) {
  const Eigen::Index n = pts.rows();
  const auto k = static_cast<Eigen::Index>(cfg.k);
  KMeansResult r;
  std::vector<double> dist(static_cast<std::size_t>(n));
  double sse = assign_and_score(pts, centres, r.assignments, dist);
  r.sse_history.push_back(sse);
  const auto update_centres = [&] {
    RowMatrixXd sums = RowMatrixXd::Zero(k, pts.cols());
    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int c = r.assignments[static_cast<std::size_t>(i)];
      sums.row(c) += pts.row(i);
      ++counts[static_cast<std::size_t>(c)];
    }
    std::vector<bool> taken(static_cast<std::size_t>(n), false);
    for (Eigen::Index c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        centres.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
        continue;
      }
      // Empty cluster: move it onto the point farthest from its own centre.
      Eigen::Index far = -1;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (taken[static_cast<std::size_t>(i)]) continue;
        if (far < 0 || dist[static_cast<std::size_t>(i)] > dist[static_cast<std::size_t>(far)]) far = i;
      }
      if (far < 0) far = 0;
      taken[static_cast<std::size_t>(far)] = true;
      centres.row(c) = pts.row(far);
    }
  };
  bool transferred = false;
  for (std::size_t it = 0; it < cfg.max_iter; ++it) {
    update_centres();
    const double prev = sse;
    sse = assign_and_score(pts, centres, r.assignments, dist);
    r.sse_history.push_back(sse);
    transferred = false;
    if (prev - sse > cfg.tol * prev) continue;
    transferred = hartigan_transfers(pts, r.assignments, k);
    if (!transferred) break;
  }
  if (transferred) {
    update_centres();
    sse = assign_and_score(pts, centres, r.assignments, dist);
    r.sse_history.push_back(sse);
  }
  r.centres = std::move(centres);
  r.sse = sse;
  return r;
}

}  // namespace detail

inline KMeansResult kmeans_fit(const RowMatrixXd& points, const KMeansConfig& cfg) {
  if (cfg.k < 1) throw ConfigError("k must be >= 1");
  if (points.rows() < static_cast<Eigen::Index>(cfg.k)) {
    throw DataError("k-means needs at least k=" + std::to_string(cfg.k) + " points, got " +
                    std::to_string(points.rows()));
  }
  if (!points.allFinite()) throw DataError("non-finite k-means input");
  KMeansResult best;
  const std::size_t restarts = std::max<std::size_t>(cfg.restarts, 1);
  for (std::size_t r = 0; r < restarts; ++r) {
    Rng rng(mix_seed(cfg.seed, r));
    auto result = detail::lloyd(points, detail::kmeanspp_seed(points, cfg.k, rng), cfg);
    result.restart = r;
    if (r == 0 || result.sse < best.sse) best = std::move(result);
  }
  return best;
}

}  // namespace dcsep
