#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <span>
#include <type_traits>
#include <vector>

#include "skysim/channel.hpp"
#include "skysim/error.hpp"
#include "skysim/scenario.hpp"

namespace skysim {

/// Unit-modulus reflection coefficients of one IRS.
class ReflectionVector {
 public:
  ReflectionVector() = default;
  explicit ReflectionVector(std::vector<double> phases) : phases_(std::move(phases)) {
    for (auto& t : phases_) {
      t = std::fmod(t, 2 * M_PI);
      if (t < 0) t += 2 * M_PI;
    }
  }

  /// Phases 2*pi*k/levels for the given level indices.
  static ReflectionVector quantized(std::span<const int> indices, int levels) {
    std::vector<double> phases;
    phases.reserve(indices.size());
    for (int k : indices) {
      if (k < 0 || k >= levels) throw ContractError("phase index out of range");
      phases.push_back(2 * M_PI * k / levels);
    }
    return ReflectionVector(std::move(phases));
  }

  static ReflectionVector zeros(int length) { return ReflectionVector(std::vector<double>(length, 0.0)); }

  std::size_t size() const { return phases_.size(); }
  double phase(std::size_t i) const { return phases_[i]; }
  const std::vector<double>& phases() const { return phases_; }
  Complex coefficient(std::size_t i) const { return std::polar(1.0, phases_[i]); }

 private:
  std::vector<double> phases_;
};

/// Which version of an illegitimate channel the radio math uses.
enum class CsiView { truth, estimate, worst_case };

template <typename T>
T view_of(const Estimated<T>& e, CsiView view) {
  switch (view) {
    case CsiView::estimate:
      return e.estimate;
    case CsiView::truth:
      return e.truth;
    case CsiView::worst_case:
      break;
  }
  // error of norm `bound` aligned with the estimate maximizes |h|
  if constexpr (std::is_same_v<T, Complex>) {
    const double a = std::abs(e.estimate);
    return a > 0 ? e.estimate * (1.0 + e.bound / a) : Complex(e.bound, 0.0);
  } else {
    const double a = norm(e.estimate);
    T out = e.estimate;
    if (a > 0) {
      for (auto& x : out) x *= 1.0 + e.bound / a;
    } else if (!out.empty()) {
      out[0] = e.bound;
    }
    return out;
  }
}

inline CsiView default_view(const RadioParams& r) { return r.worst_case_csi ? CsiView::worst_case : CsiView::truth; }

/// Sum_i h_out[i] * v_i * h_in[i]: the IRS cascade h_out diag(v) h_in.
inline Complex cascaded_gain(std::span<const Complex> h_out, const ReflectionVector& v, std::span<const Complex> h_in) {
  if (h_out.size() != v.size() || h_in.size() != v.size())
    throw DomainError("cascaded_gain: vector lengths differ");
  Complex sum{0.0, 0.0};
  for (std::size_t i = 0; i < v.size(); ++i) sum += h_out[i] * v.coefficient(i) * h_in[i];
  return sum;
}

/// Uplink SINR of UE m at C-UAV n. `co_served` lists every UE served by n this
/// slot; the others interfere with path-loss weighting as printed.
inline double sinr_uplink(const ChannelRealization& ch, int m, int n, std::span<const int> co_served,
                          const RadioParams& r) {
  double interference = 0;
  for (int i : co_served) {
    if (i == m) continue;
    interference += ch.pl_ue_cuav[i][n] * std::norm(ch.ue_cuav[i][n]) * r.ue_power_w;
  }
  return std::norm(ch.ue_cuav[m][n]) * r.ue_power_w / (r.noise_cuav_w + interference);
}

/// (B_u / M_n) log2(1 + sinr).
inline double rate_uplink(double sinr, double bandwidth_hz, int served) {
  if (served <= 0) throw DomainError("rate_uplink: no UEs share the uplink");
  return bandwidth_hz / served * std::log2(1.0 + sinr);
}

namespace detail {

/// |h_out~ diag(v) h_in~|^2 with path losses folded in.
inline double cascade_power(const ComplexVec& h_out, double pl_out, const ReflectionVector& v, const ComplexVec& h_in,
                            double pl_in) {
  return std::norm(cascaded_gain(h_out, v, h_in)) / (pl_out * pl_in);
}

}  // namespace detail

/// SINR at the BS for C-UAV n relayed by I-UAV p.
inline double sinr_bs(const ChannelRealization& ch, int n, int p, std::span<const ReflectionVector> v,
                      const RadioParams& r, CsiView view = CsiView::truth) {
  const int N = static_cast<int>(ch.cuav_iuav.size());
  const int P = static_cast<int>(ch.iuav_bs.size());
  const double signal =
      detail::cascade_power(ch.iuav_bs[p], ch.pl_iuav_bs[p], v[p], ch.cuav_iuav[n][p], ch.pl_cuav_iuav[n][p]) *
      r.cuav_power_w;
  double phi = 0;
  for (int k = 0; k < N; ++k) {
    if (k == n) continue;
    for (int q = 0; q < P; ++q)
      phi += detail::cascade_power(ch.iuav_bs[q], ch.pl_iuav_bs[q], v[q], ch.cuav_iuav[k][q], ch.pl_cuav_iuav[k][q]) *
             r.cuav_power_w;
  }
  for (int q = 0; q < P; ++q)
    phi += detail::cascade_power(ch.iuav_bs[q], ch.pl_iuav_bs[q], v[q], view_of(ch.jammer_iuav[q], view),
                                 ch.pl_jammer_iuav[q]) *
           r.jammer_power_w;
  const double direct_jam = std::norm(view_of(ch.jammer_bs, view)) / ch.pl_jammer_bs * r.jammer_power_w;
  return signal / (r.noise_bs_w + direct_jam + phi);
}

/// SINR at the eavesdropper for C-UAV n leaking through I-UAV p.
inline double sinr_eve(const ChannelRealization& ch, int n, int p, std::span<const ReflectionVector> v,
                       const RadioParams& r, CsiView view = CsiView::truth) {
  const int N = static_cast<int>(ch.cuav_iuav.size());
  const int P = static_cast<int>(ch.iuav_bs.size());
  const double signal = detail::cascade_power(view_of(ch.iuav_eve[p], view), ch.pl_iuav_eve[p], v[p],
                                              ch.cuav_iuav[n][p], ch.pl_cuav_iuav[n][p]) *
                        r.cuav_power_w;
  double phi = 0;
  for (int k = 0; k < N; ++k) {
    if (k == n) continue;
    for (int q = 0; q < P; ++q)
      phi += detail::cascade_power(view_of(ch.iuav_eve[q], view), ch.pl_iuav_eve[q], v[q], ch.cuav_iuav[k][q],
                                   ch.pl_cuav_iuav[k][q]) *
             r.cuav_power_w;
  }
  return signal / (r.noise_eve_w + phi);
}

/// (B_BS / N) log2(1 + sinr).
inline double rate_bs(double sinr, double bs_bandwidth_hz, int num_cuavs) {
  if (num_cuavs <= 0) throw DomainError("rate_bs: number of C-UAVs must be >= 1");
  return bs_bandwidth_hz / num_cuavs * std::log2(1.0 + sinr);
}

/// log2(1 + sinr), optionally scaled by the same B_BS / N share as the BS link.
inline double rate_eve(double sinr, const RadioParams& r, int num_cuavs) {
  const double spectral = std::log2(1.0 + sinr);
  return r.eve_rate_bandwidth ? r.bs_bandwidth_hz / num_cuavs * spectral : spectral;
}

/// Per-route BS and eavesdropper rates of one C-UAV.
struct RouteRates {
  std::vector<double> sinr_bs, sinr_eve, bs, eve;  // [p]
};

inline RouteRates route_rates(const ChannelRealization& ch, int n, std::span<const ReflectionVector> v,
                              const RadioParams& r, CsiView view = CsiView::truth) {
  const int N = static_cast<int>(ch.cuav_iuav.size());
  const int P = static_cast<int>(ch.iuav_bs.size());
  RouteRates out;
  for (int p = 0; p < P; ++p) {
    const double gb = sinr_bs(ch, n, p, v, r, view);
    const double ge = sinr_eve(ch, n, p, v, r, view);
    out.sinr_bs.push_back(gb);
    out.sinr_eve.push_back(ge);
    out.bs.push_back(rate_bs(gb, r.bs_bandwidth_hz, N));
    out.eve.push_back(rate_eve(ge, r, N));
  }
  return out;
}

/// Sum_p max{0, R_BS - R_E}, clamped per route.
inline double secrecy_from_rates(std::span<const double> bs, std::span<const double> eve) {
  double total = 0;
  for (std::size_t p = 0; p < bs.size(); ++p) total += std::max(0.0, bs[p] - eve[p]);
  return total;
}

inline double secrecy_rate(const ChannelRealization& ch, int n, std::span<const ReflectionVector> v,
                           const RadioParams& r, CsiView view = CsiView::truth) {
  const auto rates = route_rates(ch, n, v, r, view);
  return secrecy_from_rates(rates.bs, rates.eve);
}

/// Constraint C3: strict, so a sum exactly at the cap is not a violation.
inline bool eve_rate_cap_violated(std::span<const double> eve_rates, double cap) {
  double sum = 0;
  for (double x : eve_rates) sum += x;
  return sum > cap;
}

inline bool eve_rate_cap_violated(const ChannelRealization& ch, int n, std::span<const ReflectionVector> v,
                                  const RadioParams& r, CsiView view = CsiView::truth) {
  return eve_rate_cap_violated(route_rates(ch, n, v, r, view).eve, r.eve_rate_cap);
}

/// Per-slot radio summary.
struct RateReport {
  std::vector<std::vector<double>> sinr_uc, rate_uc;   // [m][n], zero when m is not served by n
  std::vector<std::vector<double>> sinr_bs, rate_bs;   // [n][p]
  std::vector<std::vector<double>> sinr_eve, rate_eve; // [n][p]
  std::vector<double> secrecy;                         // [n]
};

/// `served[n]` lists the UEs associated with C-UAV n this slot.
inline RateReport compute_rates(const ChannelRealization& ch, std::span<const ReflectionVector> v,
                                const std::vector<std::vector<int>>& served, const RadioParams& r,
                                CsiView view = CsiView::truth) {
  const int M = static_cast<int>(ch.ue_cuav.size());
  const int N = static_cast<int>(ch.cuav_iuav.size());
  RateReport rep;
  rep.sinr_uc.assign(M, std::vector<double>(N, 0.0));
  rep.rate_uc.assign(M, std::vector<double>(N, 0.0));
  for (int n = 0; n < N; ++n) {
    const auto& group = served[n];
    for (int m : group) {
      const double g = sinr_uplink(ch, m, n, group, r);
      rep.sinr_uc[m][n] = g;
      rep.rate_uc[m][n] = rate_uplink(g, r.uplink_bandwidth_hz, static_cast<int>(group.size()));
    }
    auto rr = route_rates(ch, n, v, r, view);
    rep.secrecy.push_back(secrecy_from_rates(rr.bs, rr.eve));
    rep.sinr_bs.push_back(std::move(rr.sinr_bs));
    rep.sinr_eve.push_back(std::move(rr.sinr_eve));
    rep.rate_bs.push_back(std::move(rr.bs));
    rep.rate_eve.push_back(std::move(rr.eve));
  }
  return rep;
}

}  // namespace skysim
