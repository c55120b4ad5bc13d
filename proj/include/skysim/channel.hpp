#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <random>
#include <vector>

#include "skysim/error.hpp"
#include "skysim/geometry.hpp"
#include "skysim/rng.hpp"
#include "skysim/scenario.hpp"

namespace skysim {

using Complex = std::complex<double>;
using ComplexVec = std::vector<Complex>;

/// L = A * d^alpha.
inline double path_loss(double d, double A, double alpha) {
  if (!(d > 0)) throw DomainError("path_loss: distance must be > 0");
  return A * std::pow(d, alpha);
}

/// One Nakagami-m coefficient: |h|^2 ~ Gamma(m, spread/m), phase uniform.
inline Complex sample_nakagami(Rng& rng, double m, double spread) {
  std::gamma_distribution<double> power(m, spread / m);
  const double magnitude = std::sqrt(power(rng));
  const double phase = 2.0 * M_PI * uniform01(rng);
  return std::polar(magnitude, phase);
}

inline ComplexVec sample_nakagami(Rng& rng, double m, double spread, int length) {
  ComplexVec v(static_cast<std::size_t>(length));
  for (auto& h : v) h = sample_nakagami(rng, m, spread);
  return v;
}

/// Uniform draw from the ball of radius `radius` in C^length (R^{2 length}).
inline ComplexVec sample_ball(Rng& rng, double radius, int length) {
  ComplexVec v(static_cast<std::size_t>(length));
  if (radius == 0.0) return v;
  double norm2 = 0;
  for (auto& x : v) {
    x = {standard_normal(rng), standard_normal(rng)};
    norm2 += std::norm(x);
  }
  const double r = radius * std::pow(uniform01(rng), 1.0 / (2.0 * length));
  const double scale = norm2 > 0 ? r / std::sqrt(norm2) : 0.0;
  for (auto& x : v) x *= scale;
  return v;
}

inline double norm(const ComplexVec& v) {
  double s = 0;
  for (const auto& x : v) s += std::norm(x);
  return std::sqrt(s);
}

/// Illegitimate link under the bounded CSI model: truth = estimate + error, |error| <= bound.
template <typename T>
struct Estimated {
  T estimate{};
  T truth{};
  double bound = 0.0;
};

struct ChannelRealization {
  // legitimate links, exact CSI
  std::vector<std::vector<Complex>> ue_cuav;        // [m][n]
  std::vector<std::vector<ComplexVec>> cuav_iuav;   // [n][p], length L
  std::vector<ComplexVec> iuav_bs;                  // [p], length L
  // illegitimate links
  std::vector<Estimated<ComplexVec>> iuav_eve;      // [p]
  std::vector<Estimated<ComplexVec>> jammer_iuav;   // [p]
  Estimated<Complex> jammer_bs;
  std::vector<Estimated<Complex>> cuav_eve;         // [n]
  // path losses
  std::vector<std::vector<double>> pl_ue_cuav;      // [m][n]
  std::vector<std::vector<double>> pl_cuav_iuav;    // [n][p]
  std::vector<double> pl_iuav_bs;                   // [p]
  std::vector<double> pl_iuav_eve;                  // [p]
  std::vector<double> pl_jammer_iuav;               // [p]
  double pl_jammer_bs = 1.0;
  std::vector<double> pl_cuav_eve;                  // [n]
};

namespace detail {

inline Estimated<ComplexVec> sample_estimated(Rng& rng, double m, double spread, int length, double bound) {
  Estimated<ComplexVec> e;
  e.estimate = sample_nakagami(rng, m, spread, length);
  const ComplexVec err = sample_ball(rng, bound, length);
  e.truth = e.estimate;
  for (std::size_t i = 0; i < err.size(); ++i) e.truth[i] += err[i];
  e.bound = bound;
  return e;
}

inline Estimated<Complex> sample_estimated(Rng& rng, double m, double spread, double bound) {
  auto v = sample_estimated(rng, m, spread, 1, bound);
  return {v.estimate[0], v.truth[0], bound};
}

}  // namespace detail

/// Samples every link coefficient for one slot (block fading).
inline ChannelRealization sample_channels(const WorldState& w, const ScenarioConfig& c, Rng& rng) {
  const RadioParams& r = c.radio;
  const int M = static_cast<int>(w.ues.size());
  const int N = w.num_cuavs;
  const int P = w.num_iuavs();
  const int L = c.irs_elements;
  const double spread = r.fading_spread;
  auto pl = [&r](const Vec3& a, const Vec3& b) {
    return path_loss(std::max(distance(a, b), r.min_link_distance_m), r.pathloss_constant, r.pathloss_exponent);
  };

  ChannelRealization ch;
  ch.ue_cuav.assign(M, std::vector<Complex>(N));
  ch.pl_ue_cuav.assign(M, std::vector<double>(N));
  for (int m = 0; m < M; ++m)
    for (int n = 0; n < N; ++n) {
      ch.ue_cuav[m][n] = sample_nakagami(rng, r.nakagami.ue_cuav, spread);
      ch.pl_ue_cuav[m][n] = pl(w.ues[m].position, w.cuav(n).position);
    }

  ch.cuav_iuav.assign(N, std::vector<ComplexVec>(P));
  ch.pl_cuav_iuav.assign(N, std::vector<double>(P));
  for (int n = 0; n < N; ++n)
    for (int p = 0; p < P; ++p) {
      ch.cuav_iuav[n][p] = sample_nakagami(rng, r.nakagami.cuav_iuav, spread, L);
      ch.pl_cuav_iuav[n][p] = pl(w.cuav(n).position, w.iuav(p).position);
    }

  for (int p = 0; p < P; ++p) {
    const Vec3& s = w.iuav(p).position;
    ch.iuav_bs.push_back(sample_nakagami(rng, r.nakagami.iuav_bs, spread, L));
    ch.pl_iuav_bs.push_back(pl(s, w.base_station));
    ch.iuav_eve.push_back(detail::sample_estimated(rng, r.nakagami.iuav_eve, spread, L, r.csi_error.iuav_eve));
    ch.pl_iuav_eve.push_back(pl(s, w.eavesdropper.position));
    ch.jammer_iuav.push_back(
        detail::sample_estimated(rng, r.nakagami.jammer_iuav, spread, L, r.csi_error.jammer_iuav));
    ch.pl_jammer_iuav.push_back(pl(w.jammer.position, s));
  }

  ch.jammer_bs = detail::sample_estimated(rng, r.nakagami.jammer_bs, spread, r.csi_error.jammer_bs);
  ch.pl_jammer_bs = pl(w.jammer.position, w.base_station);

  for (int n = 0; n < N; ++n) {
    ch.cuav_eve.push_back(detail::sample_estimated(rng, r.nakagami.cuav_eve, spread, r.csi_error.cuav_eve));
    ch.pl_cuav_eve.push_back(pl(w.cuav(n).position, w.eavesdropper.position));
  }
  return ch;
}

}  // namespace skysim
