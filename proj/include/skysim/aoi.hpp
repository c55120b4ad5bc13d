#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <optional>
#include <span>
#include <vector>

#include "skysim/error.hpp"

namespace skysim {

/// a + e^min(a, cap): the exponential penalty applied to violating ages.
inline double exp_penalty(double age, double cap = INFINITY) { return age + std::exp(std::min(age, cap)); }

/// Exact integral of e^min(a, cap) over [lo, hi].
inline double capped_exp_integral(double lo, double hi, double cap) {
  if (hi <= lo) return 0.0;
  if (hi <= cap) return std::exp(hi) - std::exp(lo);
  if (lo >= cap) return std::exp(cap) * (hi - lo);
  return std::exp(cap) - std::exp(lo) + std::exp(cap) * (hi - cap);
}

/// Integrals over one stretch where the age ramps linearly from a0 to a1.
struct AgeIntegrals {
  double violated = 0.0;  // measure of {a >= threshold}
  double penalty = 0.0;   // integral of f(a)
  double linear = 0.0;    // integral of a
};

inline AgeIntegrals integrate_ramp(double a0, double a1, double threshold, double cap) {
  AgeIntegrals out;
  if (a1 <= a0) return out;
  out.linear = 0.5 * (a1 * a1 - a0 * a0);
  const double lo = std::max(a0, threshold);
  out.penalty = out.linear;
  if (a1 > lo) {
    out.violated = a1 - lo;
    out.penalty += capped_exp_integral(lo, a1, cap);
  }
  return out;
}

struct AgeEvent {
  enum class Kind { generation, collection };
  Kind kind = Kind::generation;
  int ue = 0;
  double time = 0.0;  // slots
};

/// Age-of-information bookkeeping for every UE of one environment. Times and
/// ages are in slots.
class AgeTracker {
 public:
  AgeTracker() = default;
  AgeTracker(int num_ues, double threshold, double exponent_cap)
      : threshold_(threshold), cap_(exponent_cap), ues_(static_cast<std::size_t>(num_ues)) {}

  /// Integrates every UE's age over [clock(), to], applying `events` (sorted by
  /// time, all inside that window) as they occur.
  void advance(std::span<const AgeEvent> events, double to) {
    if (to < clock_) throw ContractError("AgeTracker::advance: time runs backwards");
    double prev = clock_;
    for (const auto& e : events) {
      if (e.time < prev || e.time > to) throw ContractError("AgeTracker::advance: event outside window or unsorted");
      if (e.ue < 0 || e.ue >= num_ues()) throw ContractError("AgeTracker::advance: bad UE index");
      integrate_all(clock_, e.time);
      clock_ = e.time;
      prev = e.time;
      auto& ue = ues_[static_cast<std::size_t>(e.ue)];
      if (e.kind == AgeEvent::Kind::generation) {
        ue.pending.push_back(e.time);
      } else {
        if (ue.pending.empty()) throw ContractError("AgeTracker::advance: collection from an empty queue");
        ue.pending.pop_front();
      }
    }
    integrate_all(clock_, to);
    clock_ = to;
  }

  int num_ues() const { return static_cast<int>(ues_.size()); }
  double clock() const { return clock_; }
  double threshold() const { return threshold_; }
  double exponent_cap() const { return cap_; }

  /// Generation time of the oldest uncollected data, if any.
  std::optional<double> oldest(int m) const {
    const auto& q = ues_[static_cast<std::size_t>(m)].pending;
    if (q.empty()) return std::nullopt;
    return q.front();
  }
  double age(int m) const {
    auto z = oldest(m);
    return z ? clock_ - *z : 0.0;
  }
  std::size_t pending(int m) const { return ues_[static_cast<std::size_t>(m)].pending.size(); }

  double violated_time(int m) const { return ues_[static_cast<std::size_t>(m)].totals.violated; }
  double penalty_integral(int m) const { return ues_[static_cast<std::size_t>(m)].totals.penalty; }
  double linear_integral(int m) const { return ues_[static_cast<std::size_t>(m)].totals.linear; }

 private:
  struct Ue {
    std::deque<double> pending;
    AgeIntegrals totals;
  };

  void integrate_all(double from, double to) {
    if (to <= from) return;
    for (auto& ue : ues_) {
      if (ue.pending.empty()) continue;
      const double z = ue.pending.front();
      const auto part = integrate_ramp(from - z, to - z, threshold_, cap_);
      ue.totals.violated += part.violated;
      ue.totals.penalty += part.penalty;
      ue.totals.linear += part.linear;
    }
  }

  double threshold_ = 100.0;
  double cap_ = 50.0;
  double clock_ = 0.0;
  std::vector<Ue> ues_;
};

/// chi = (1/M) sum_m |G_m|, optionally divided by the run length X.
inline double violation_ratio(const AgeTracker& t, std::optional<double> normalize_by = std::nullopt) {
  if (t.num_ues() == 0) return 0.0;
  double sum = 0;
  for (int m = 0; m < t.num_ues(); ++m) sum += t.violated_time(m);
  double chi = sum / t.num_ues();
  if (normalize_by) chi /= *normalize_by;
  return chi;
}

/// Q = (1/M) sum_m w_m integral f(age).
inline double aoi_penalty(const AgeTracker& t, std::span<const double> weights) {
  if (t.num_ues() == 0) return 0.0;
  if (static_cast<int>(weights.size()) != t.num_ues()) throw ContractError("aoi_penalty: one weight per UE required");
  double sum = 0;
  for (int m = 0; m < t.num_ues(); ++m) sum += weights[m] * t.penalty_integral(m);
  return sum / t.num_ues();
}

/// Q with f(a) = a everywhere (no exponential branch).
inline double linear_aoi_penalty(const AgeTracker& t, std::span<const double> weights) {
  if (t.num_ues() == 0) return 0.0;
  double sum = 0;
  for (int m = 0; m < t.num_ues(); ++m) sum += weights[m] * t.linear_integral(m);
  return sum / t.num_ues();
}

}  // namespace skysim
