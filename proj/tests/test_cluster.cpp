#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "dcsep/cluster.hpp"
#include "dcsep/kmeans.hpp"
#include "oracles.hpp"
#include "tiny_model.hpp"

using namespace dcsep;

namespace {

RowMatrixXd random_points(Rng& rng, Eigen::Index n, Eigen::Index d) {
  RowMatrixXd p(n, d);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = rng.normal();
  return p;
}

KMeansConfig kcfg(std::size_t k, std::size_t restarts, std::uint64_t seed) {
  KMeansConfig c;
  c.k = k;
  c.restarts = restarts;
  c.seed = seed;
  return c;
}

}  // namespace

TEST(KMeans, SeparatedBlobsRecoverBlobMeans) {
  Rng rng(1);
  RowMatrixXd pts(40, 2);
  for (Eigen::Index i = 0; i < 40; ++i) {
    const double cx = i < 20 ? -10.0 : 10.0;
    pts(i, 0) = cx + rng.uniform(-0.5, 0.5);
    pts(i, 1) = rng.uniform(-0.5, 0.5);
  }
  const auto r = kmeans_fit(pts, kcfg(2, 5, 3));
  const Eigen::RowVectorXd m0 = pts.topRows(20).colwise().mean();
  const Eigen::RowVectorXd m1 = pts.bottomRows(20).colwise().mean();
  const int a = r.assignments[0];
  EXPECT_LT((r.centres.row(a) - m0).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((r.centres.row(1 - a) - m1).cwiseAbs().maxCoeff(), 1e-9);
  for (int i = 0; i < 40; ++i) EXPECT_EQ(r.assignments[static_cast<std::size_t>(i)], i < 20 ? a : 1 - a);
}

TEST(KMeans, MatchesExhaustivePartitionOracle) {
  Rng rng(2);
  int matches = 0;
  const int trials = 1000;
  for (int trial = 0; trial < trials; ++trial) {
    const auto n = static_cast<Eigen::Index>(2 + rng.below(11));
    const auto d = static_cast<Eigen::Index>(1 + rng.below(3));
    const RowMatrixXd pts = random_points(rng, n, d);
    const double got = kmeans_fit(pts, kcfg(2, 20, static_cast<std::uint64_t>(trial))).sse;
    const double best = oracle::best_two_partition_sse(pts);
    EXPECT_GE(got, best - 1e-9);
    if (std::abs(got - best) <= 1e-9 * std::max(1.0, best)) ++matches;
  }
  EXPECT_GE(matches, 990);
}

TEST(KMeans, NoSinglePointTransferLowersSse) {
  Rng rng(8);
  for (int trial = 0; trial < 300; ++trial) {
    const auto n = static_cast<Eigen::Index>(5 + rng.below(30));
    const auto k = 2 + rng.below(3);
    const RowMatrixXd pts = random_points(rng, n, static_cast<Eigen::Index>(1 + rng.below(3)));
    const auto r = kmeans_fit(pts, kcfg(k, 1 + rng.below(3), static_cast<std::uint64_t>(trial)));
    const double got = oracle::partition_sse(pts, r.assignments, static_cast<int>(k));
    EXPECT_NEAR(got, r.sse, 1e-9 * std::max(1.0, got));
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int c = 0; c < static_cast<int>(k); ++c) {
        auto moved = r.assignments;
        moved[static_cast<std::size_t>(i)] = c;
        EXPECT_GE(oracle::partition_sse(pts, moved, static_cast<int>(k)), got - 1e-9 * std::max(1.0, got))
            << "trial " << trial << " point " << i << " to " << c;
      }
    }
  }
}

TEST(KMeans, IdenticalPointsGiveZeroSse) {
  RowMatrixXd pts(6, 3);
  pts.rowwise() = Eigen::RowVector3d(1.0, -2.0, 0.5);
  const auto a = kmeans_fit(pts, kcfg(3, 4, 1));
  const auto b = kmeans_fit(pts, kcfg(3, 4, 1));
  EXPECT_EQ(a.sse, 0.0);
  for (Eigen::Index c = 0; c < 3; ++c) EXPECT_EQ(a.centres.row(c), pts.row(0));
  EXPECT_EQ(a.centres, b.centres);
}

TEST(KMeans, SseNonIncreasingAcrossIterations) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const RowMatrixXd pts = random_points(rng, 200, 4);
    const auto r = kmeans_fit(pts, kcfg(2 + rng.below(4), 3, static_cast<std::uint64_t>(trial)));
    ASSERT_FALSE(r.sse_history.empty());
    for (std::size_t i = 1; i < r.sse_history.size(); ++i) EXPECT_LE(r.sse_history[i], r.sse_history[i - 1]);
    EXPECT_EQ(r.sse, r.sse_history.back());
  }
}

TEST(KMeans, DeterministicGivenSeed) {
  Rng rng(4);
  const RowMatrixXd pts = random_points(rng, 300, 5);
  const auto a = kmeans_fit(pts, kcfg(3, 10, 77));
  const auto b = kmeans_fit(pts, kcfg(3, 10, 77));
  EXPECT_EQ(a.centres, b.centres);
  EXPECT_EQ(a.assignments, b.assignments);
  EXPECT_EQ(a.sse, b.sse);
}

TEST(KMeans, BestRestartHasLowestSse) {
  Rng rng(5);
  const RowMatrixXd pts = random_points(rng, 80, 2);
  const auto all = kmeans_fit(pts, kcfg(4, 12, 9));
  for (std::size_t r = 0; r < 12; ++r) {
    KMeansConfig one = kcfg(4, 1, 0);
    // A single restart run with the r-th stream seed reproduces restart r.
    Rng probe(mix_seed(9, r));
    const auto single = detail::lloyd(pts, detail::kmeanspp_seed(pts, 4, probe), one);
    EXPECT_LE(all.sse, single.sse);
  }
}

TEST(KMeans, TooFewPointsRejected) {
  EXPECT_THROW(kmeans_fit(RowMatrixXd::Zero(1, 2), kcfg(2, 1, 0)), DataError);
  RowMatrixXd bad = RowMatrixXd::Zero(3, 1);
  bad(1, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(kmeans_fit(bad, kcfg(2, 1, 0)), DataError);
}

TEST(AssignNearest, RowAtCentreOneGetsLabelOne) {
  RowMatrixXd c(2, 2);
  c << 0.0, 0.0, 3.0, 4.0;
  RowMatrixXd rows(1, 2);
  rows << 3.0, 4.0;
  EXPECT_EQ(assign_nearest(c, rows)[0], 1);
}

TEST(AssignNearest, EquidistantRowGoesToFirstCentre) {
  RowMatrixXd c(3, 1);
  c << -1.0, 1.0, 1.0;
  RowMatrixXd rows(2, 1);
  rows << 0.0, 1.0;
  const auto l = assign_nearest(c, rows);
  EXPECT_EQ(l[0], 0);
  EXPECT_EQ(l[1], 1);
}

TEST(AssignNearest, InvariantUnderCommonRotation) {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const RowMatrixXd c = random_points(rng, 3, 3);
    const RowMatrixXd rows = random_points(rng, 40, 3);
    const Eigen::Matrix3d q = Eigen::Quaterniond::UnitRandom().toRotationMatrix();
    EXPECT_EQ(assign_nearest(c, rows), assign_nearest(c * q, rows * q));
  }
}

TEST(AssignNearest, NoOtherLabelIsStrictlyCloser) {
  Rng rng(7);
  const RowMatrixXd c = random_points(rng, 5, 4);
  const RowMatrixXd rows = random_points(rng, 500, 4);
  const auto l = assign_nearest(c, rows);
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    const double mine = (rows.row(i) - c.row(l[static_cast<std::size_t>(i)])).squaredNorm();
    for (Eigen::Index k = 0; k < c.rows(); ++k) EXPECT_GE((rows.row(i) - c.row(k)).squaredNorm(), mine);
  }
}

TEST(AssignNearest, DimensionMismatchRejected) {
  EXPECT_THROW(assign_nearest(RowMatrixXd::Zero(2, 3), RowMatrixXd::Zero(4, 2)), ShapeError);
}

TEST(BufferCentres, TwoActiveTonesGiveWellSeparatedCentres) {
  const auto& model = fixture::tone_model();
  Rng rng(100);
  for (int trial = 0; trial < 5; ++trial) {
    const auto ex = fixture::tone_pair(rng, 1200);
    const auto est = estimate_centres_from_buffer(model, ex.mixture, 40.0, kcfg(2, 10, 1));
    EXPECT_EQ(est.centres.centres.rows(), 2);
    EXPECT_EQ(est.centres.source, CentreSource::kBuffer);
    EXPECT_GT(est.centres.separation_ratio, 1.0) << "trial " << trial;
    EXPECT_FALSE(est.centres.degenerate());
  }
}

TEST(BufferCentres, SingleToneIsFlaggedOrRejected) {
  const auto& model = fixture::tone_model();
  Rng rng(101);
  for (int trial = 0; trial < 5; ++trial) {
    const auto w = fixture::tone(rng.uniform(300.0, 900.0), 1200, 0.4, rng.uniform(0.0, 6.0));
    try {
      const auto est = estimate_centres_from_buffer(model, w, 40.0, kcfg(2, 10, 1));
      EXPECT_TRUE(est.centres.degenerate()) << "ratio " << est.centres.separation_ratio;
    } catch (const InsufficientEvidenceError&) {
      SUCCEED();
    }
  }
}

TEST(BufferCentres, SilentBufferIsInsufficientEvidence) {
  Waveform silent;
  silent.samples.assign(400, 0.0);
  EXPECT_THROW(estimate_centres_from_buffer(fixture::tone_model(), silent, 40.0, kcfg(2, 10, 1)),
               InsufficientEvidenceError);
}

TEST(BufferCentres, StateMatchesStreamingOverCompleteFrames) {
  const auto& model = fixture::tone_model();
  Rng rng(102);
  const auto ex = fixture::tone_pair(rng, 803);
  const auto est = estimate_centres_from_buffer(model, ex.mixture, 40.0, kcfg(2, 10, 1));
  const RowMatrixXd feats = log_magnitude(stft(ex.mixture, model.framing));
  LstmState s = LstmState::zeros(model);
  for (std::size_t t = 0; t < 803 / 4; ++t) forward_streaming(model, feats.row(static_cast<Eigen::Index>(t)).transpose(), s);
  ASSERT_EQ(s.layers.size(), est.state.layers.size());
  for (std::size_t l = 0; l < s.layers.size(); ++l) {
    EXPECT_EQ(s.layers[l].h, est.state.layers[l].h);
    EXPECT_EQ(s.layers[l].c, est.state.layers[l].c);
  }
}

TEST(BufferCentres, ShortBufferAndBidirectionalRejected) {
  Waveform w;
  w.samples.assign(5, 0.1);
  EXPECT_THROW(estimate_centres_from_buffer(fixture::tone_model(), w, 40.0, kcfg(2, 1, 0)), ConfigError);
  NetworkShape s = fixture::tone_shape();
  s.bidirectional = true;
  w.samples.assign(100, 0.1);
  EXPECT_THROW(estimate_centres_from_buffer(init_network(s, 1), w, 40.0, kcfg(2, 1, 0)), UnsupportedError);
}
