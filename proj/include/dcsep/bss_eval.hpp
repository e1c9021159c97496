#pragma once

// BSS-EVAL source metrics with time-invariant distortion filters.
//
// An estimate (zero-padded by filter_len-1 samples) is split into
//   s_target: projection onto filter_len delays of the matched true source,
//   e_interf: projection onto the delays of all true sources, minus s_target,
//   e_artif:  the remainder.
// The Gram matrices are block-Toeplitz and built from FFT correlations.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dcsep/dsp.hpp"
#include "dcsep/error.hpp"
#include "dcsep/fft.hpp"

namespace dcsep {

inline constexpr double kMetricCapDb = 300.0;
// Residual energy below this fraction of the target energy is rounding noise
// from the projection and is reported as the cap.
inline constexpr double kNumericalZeroRatio = 1e-20;

struct Decomposition {
  std::vector<double> s_target;
  std::vector<double> e_interf;
  std::vector<double> e_artif;
  bool regularized = false;
};

struct SourceMetrics {
  double sdr_db = 0.0;
  double sir_db = 0.0;
  double sar_db = 0.0;
};

struct EvalMetrics {
  std::vector<double> sdr_db, sir_db, sar_db;  // indexed by true source
  std::vector<std::size_t> permutation;        // estimate index matched to each true source
  std::size_t filter_len = 0;

  double mean_sdr() const {
    return sdr_db.empty() ? 0.0 : std::accumulate(sdr_db.begin(), sdr_db.end(), 0.0) / static_cast<double>(sdr_db.size());
  }
};

namespace detail {

inline double energy(const std::vector<double>& v) {
  double e = 0.0;
  for (double x : v) e += x * x;
  return e;
}

inline double ratio_db(double num, double den) {
  if (num <= 0.0) return den <= 0.0 ? kMetricCapDb : -kMetricCapDb;
  if (den <= kNumericalZeroRatio * num) return kMetricCapDb;
  return std::clamp(10.0 * std::log10(num / den), -kMetricCapDb, kMetricCapDb);
}

inline std::vector<std::complex<double>> spectrum_of(const std::vector<double>& x, const FftPlan& plan) {
  std::vector<std::complex<double>> buf(plan.size(), {0.0, 0.0});
  for (std::size_t i = 0; i < x.size(); ++i) buf[i] = x[i];
  plan.transform(buf);
  return buf;
}

}  // namespace detail

// Precomputes correlations and factorizations of the reference sources so
// several estimates can be decomposed cheaply.
class Projector {
 public:
  Projector(const std::vector<Waveform>& truths, std::size_t filter_len)
      : filter_len_(filter_len), plan_(next_power_of_two(truths.empty() ? 1 : truths[0].size() + 2 * filter_len)) {
    if (truths.empty()) throw ShapeError("no reference sources");
    if (filter_len < 1) throw ConfigError("filter_len must be >= 1");
    n_ = truths[0].size();
    for (const auto& t : truths) {
      if (t.size() != n_) throw ShapeError("reference sources differ in length");
      refs_.push_back(t.samples);
      spectra_.push_back(detail::spectrum_of(t.samples, plan_));
    }
    const std::size_t c = refs_.size();
    const auto L = static_cast<Eigen::Index>(filter_len_);
    Eigen::MatrixXd gram(static_cast<Eigen::Index>(c) * L, static_cast<Eigen::Index>(c) * L);
    for (std::size_t i = 0; i < c; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        // r(k) = sum_m s_i[m] s_j[m+k]; block entry (a, b) = r(a - b).
        const auto r = correlate(spectra_[i], spectra_[j]);
        for (Eigen::Index a = 0; a < L; ++a) {
          for (Eigen::Index b = 0; b < L; ++b) {
            gram(static_cast<Eigen::Index>(i) * L + a, static_cast<Eigen::Index>(j) * L + b) = lag(r, a - b);
          }
        }
      }
    }
    all_ = factorize(gram);
    for (std::size_t j = 0; j < c; ++j) {
      single_.push_back(factorize(gram.block(static_cast<Eigen::Index>(j) * L, static_cast<Eigen::Index>(j) * L, L, L)));
    }
  }

  std::size_t num_sources() const { return refs_.size(); }
  std::size_t signal_len() const { return n_; }
  std::size_t filter_len() const { return filter_len_; }

  // Decomposition of `estimate` with respect to reference `target`.
  Decomposition decompose(const Waveform& estimate, std::size_t target) const {
    if (estimate.size() != n_) {
      throw ShapeError("estimate has " + std::to_string(estimate.size()) + " samples, references have " +
                       std::to_string(n_));
    }
    if (target >= refs_.size()) throw ShapeError("target index out of range");
    const auto est_spec = detail::spectrum_of(estimate.samples, plan_);
    const auto all = project(est_spec, all_, all_sources());
    const auto own = project(est_spec, single_[target], {target});

    const std::size_t m = n_ + filter_len_ - 1;
    Decomposition d;
    d.regularized = all_.regularized || single_[target].regularized;
    d.s_target = own;
    d.e_interf.resize(m);
    d.e_artif.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
      const double e = i < n_ ? estimate.samples[i] : 0.0;
      d.e_interf[i] = all[i] - own[i];
      d.e_artif[i] = e - all[i];
    }
    return d;
  }

 private:
  struct Factor {
    Eigen::LDLT<Eigen::MatrixXd> ldlt;
    Eigen::LLT<Eigen::MatrixXd> llt;
    bool use_llt = true;
    bool regularized = false;

    Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const {
      if (use_llt) return llt.solve(rhs);
      return ldlt.solve(rhs);
    }
  };

  static Factor factorize(const Eigen::MatrixXd& gram) {
    Factor f;
    f.llt.compute(gram);
    if (f.llt.info() == Eigen::Success) return f;
    // Singular normal equations: ridge of 1e-12 * trace.
    const double trace = gram.trace();
    Eigen::MatrixXd reg = gram;
    reg.diagonal().array() += trace > 0.0 ? 1e-12 * trace : 1e-300;
    f.use_llt = false;
    f.regularized = true;
    f.ldlt.compute(reg);
    return f;
  }

  std::vector<std::size_t> all_sources() const {
    std::vector<std::size_t> idx(refs_.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return idx;
  }

  std::vector<double> correlate(const std::vector<std::complex<double>>& a,
                                const std::vector<std::complex<double>>& b) const {
    std::vector<std::complex<double>> prod(plan_.size());
    for (std::size_t k = 0; k < prod.size(); ++k) prod[k] = std::conj(a[k]) * b[k];
    plan_.transform(prod, true);
    std::vector<double> r(plan_.size());
    const double scale = 1.0 / static_cast<double>(plan_.size());
    for (std::size_t k = 0; k < r.size(); ++k) r[k] = prod[k].real() * scale;
    return r;
  }

  double lag(const std::vector<double>& r, Eigen::Index k) const {
    return k >= 0 ? r[static_cast<std::size_t>(k)] : r[r.size() - static_cast<std::size_t>(-k)];
  }

  // Least-squares projection of the estimate onto the delays of `which`.
  std::vector<double> project(const std::vector<std::complex<double>>& est_spec, const Factor& factor,
                              const std::vector<std::size_t>& which) const {
    const auto L = static_cast<Eigen::Index>(filter_len_);
    Eigen::VectorXd rhs(static_cast<Eigen::Index>(which.size()) * L);
    for (std::size_t q = 0; q < which.size(); ++q) {
      // <e, s_j delayed by a> = sum_m s_j[m] e[m+a]
      const auto x = correlate(spectra_[which[q]], est_spec);
      for (Eigen::Index a = 0; a < L; ++a) rhs(static_cast<Eigen::Index>(q) * L + a) = x[static_cast<std::size_t>(a)];
    }
    const Eigen::VectorXd coef = factor.solve(rhs);
    // Sum of each reference filtered by its coefficients (linear convolution).
    std::vector<std::complex<double>> acc(plan_.size(), {0.0, 0.0});
    for (std::size_t q = 0; q < which.size(); ++q) {
      std::vector<double> h(coef.data() + static_cast<Eigen::Index>(q) * L, coef.data() + static_cast<Eigen::Index>(q + 1) * L);
      const auto hs = detail::spectrum_of(h, plan_);
      const auto& ss = spectra_[which[q]];
      for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += hs[k] * ss[k];
    }
    plan_.transform(acc, true);
    const std::size_t m = n_ + filter_len_ - 1;
    std::vector<double> out(m);
    const double scale = 1.0 / static_cast<double>(plan_.size());
    for (std::size_t i = 0; i < m; ++i) out[i] = acc[i].real() * scale;
    return out;
  }

  std::size_t filter_len_;
  std::size_t n_ = 0;
  FftPlan plan_;
  std::vector<std::vector<double>> refs_;
  std::vector<std::vector<std::complex<double>>> spectra_;
  Factor all_;
  std::vector<Factor> single_;
};

inline Decomposition decompose(const Waveform& estimate, const std::vector<Waveform>& truths, std::size_t target,
                               std::size_t filter_len) {
  return Projector(truths, filter_len).decompose(estimate, target);
}

inline SourceMetrics metrics(const Decomposition& d) {
  const double target = detail::energy(d.s_target);
  const double interf = detail::energy(d.e_interf);
  const double artif = detail::energy(d.e_artif);
  std::vector<double> distortion(d.e_interf.size()), signal(d.s_target.size());
  for (std::size_t i = 0; i < distortion.size(); ++i) {
    distortion[i] = d.e_interf[i] + d.e_artif[i];
    signal[i] = d.s_target[i] + d.e_interf[i];
  }
  SourceMetrics m;
  m.sdr_db = detail::ratio_db(target, detail::energy(distortion));
  m.sir_db = detail::ratio_db(target, interf);
  m.sar_db = detail::ratio_db(detail::energy(signal), artif);
  return m;
}

// Scores every assignment of estimates to references and keeps the one with
// the highest mean SDR; the identity wins ties.
inline EvalMetrics resolve_permutation(const std::vector<Waveform>& estimates, const Projector& projector) {
  const std::size_t c = projector.num_sources();
  if (estimates.size() != c) throw ShapeError("estimate count differs from reference count");
  // table[e][j]: estimate e scored against reference j.
  std::vector<std::vector<SourceMetrics>> table(c, std::vector<SourceMetrics>(c));
  for (std::size_t e = 0; e < c; ++e) {
    for (std::size_t j = 0; j < c; ++j) table[e][j] = metrics(projector.decompose(estimates[e], j));
  }
  std::vector<std::size_t> perm(c);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  EvalMetrics best;
  double best_mean = -std::numeric_limits<double>::infinity();
  do {
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += table[perm[j]][j].sdr_db;
    mean /= static_cast<double>(c);
    if (mean > best_mean) {
      best_mean = mean;
      best.permutation = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  best.filter_len = projector.filter_len();
  for (std::size_t j = 0; j < c; ++j) {
    const auto& m = table[best.permutation[j]][j];
    best.sdr_db.push_back(m.sdr_db);
    best.sir_db.push_back(m.sir_db);
    best.sar_db.push_back(m.sar_db);
  }
  return best;
}

inline EvalMetrics resolve_permutation(const std::vector<Waveform>& estimates, const std::vector<Waveform>& truths,
                                       std::size_t filter_len) {
  return resolve_permutation(estimates, Projector(truths, filter_len));
}

}  // namespace dcsep
