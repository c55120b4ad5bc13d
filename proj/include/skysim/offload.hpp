#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <optional>
#include <span>
#include <vector>

#include "skysim/error.hpp"

namespace skysim {

/// Fractions of one UE's task: `local` computed on the C-UAV, `relay[p]` sent
/// to the BS through I-UAV p.
struct TaskSplit {
  double local = 1.0;
  std::vector<double> relay;

  double total() const {
    double s = local;
    for (double b : relay) s += b;
    return s;
  }
  bool valid(double tol = 1e-12) const {
    if (local < 0 || local > 1) return false;
    for (double b : relay)
      if (b < 0 || b > 1) return false;
    return std::abs(total() - 1.0) <= tol;
  }
  static TaskSplit all_local(int routes) { return {1.0, std::vector<double>(static_cast<std::size_t>(routes), 0.0)}; }
};

/// All points of the (P+1)-simplex whose components are multiples of 1/G.
class SplitAlphabet {
 public:
  SplitAlphabet(int routes, int grid) : routes_(routes), grid_(grid) {
    if (routes < 0 || grid < 1) throw DomainError("SplitAlphabet: need routes >= 0 and grid >= 1");
    std::vector<int> parts(static_cast<std::size_t>(routes) + 1, 0);
    enumerate(parts, 0, grid);
  }

  int size() const { return static_cast<int>(points_.size()); }
  int routes() const { return routes_; }
  int grid() const { return grid_; }
  const std::vector<int>& counts(int index) const { return points_.at(static_cast<std::size_t>(index)); }

  TaskSplit decode(int index) const {
    if (index < 0 || index >= size()) throw ContractError("split index out of range");
    const auto& parts = points_[static_cast<std::size_t>(index)];
    TaskSplit s;
    s.local = static_cast<double>(parts[0]) / grid_;
    for (std::size_t p = 1; p < parts.size(); ++p) s.relay.push_back(static_cast<double>(parts[p]) / grid_);
    return s;
  }

  static constexpr int all_local_index() { return 0; }

  /// Index of the equal split, when 1/(P+1) lies on the grid.
  std::optional<int> uniform_index() const {
    if (grid_ % (routes_ + 1) != 0) return std::nullopt;
    const int share = grid_ / (routes_ + 1);
    for (int i = 0; i < size(); ++i)
      if (std::all_of(points_[i].begin(), points_[i].end(), [share](int c) { return c == share; })) return i;
    return std::nullopt;
  }

 private:
  // local share descending, so index 0 is all-local
  void enumerate(std::vector<int>& parts, std::size_t pos, int left) {
    if (pos + 1 == parts.size()) {
      parts[pos] = left;
      points_.push_back(parts);
      return;
    }
    for (int k = left; k >= 0; --k) {
      parts[pos] = k;
      enumerate(parts, pos + 1, left - k);
    }
  }

  int routes_;
  int grid_;
  std::vector<std::vector<int>> points_;
};

inline TaskSplit decode_split(int index, int routes, int grid = 4) { return SplitAlphabet(routes, grid).decode(index); }

struct Cost {
  double time = 0.0;    // s
  double energy = 0.0;  // J
};

/// UE -> C-UAV upload of `bits`.
inline Cost u2c_cost(double bits, double rate_uc, std::complex<double> h_uc, double ue_power_w) {
  if (!(rate_uc > 0)) throw UnreachableLinkError("u2c_cost: uplink rate is zero");
  const double t = bits / rate_uc;
  return {t, std::norm(h_uc) * ue_power_w * t};
}

/// Local share computed on the C-UAV at f = F_u / M_n cycles/s.
inline Cost cuav_compute_cost(double local_fraction, double bits, double cycles_per_bit, double cpu_share_hz,
                              double switched_capacitance) {
  if (!(cpu_share_hz > 0)) throw DomainError("cuav_compute_cost: CPU share must be > 0");
  const double t = local_fraction * bits * cycles_per_bit / cpu_share_hz;
  return {t, switched_capacitance * cpu_share_hz * cpu_share_hz * cpu_share_hz * t};
}

/// C-UAV -> BS relay of one route's share; `cascade` is the IRS cascade without path loss.
inline Cost c2i_cost(double relay_fraction, double bits, double rate_bs, std::complex<double> cascade,
                     double cuav_power_w) {
  if (relay_fraction == 0.0) return {};
  if (!(rate_bs > 0)) throw UnreachableLinkError("c2i_cost: relay route has zero rate");
  const double t = relay_fraction * bits / rate_bs;
  return {t, t * std::norm(cascade) * cuav_power_w};
}

/// BS computation of one route's share with F_BS split equally over N C-UAVs.
inline double bs_compute_delay(double relay_fraction, double bits, double cycles_per_bit, double bs_cpu_hz,
                               int num_cuavs) {
  if (num_cuavs < 1) throw DomainError("bs_compute_delay: number of C-UAVs must be >= 1");
  return relay_fraction * bits * cycles_per_bit / (bs_cpu_hz / num_cuavs);
}

/// Delay terms of one UE's task at one C-UAV.
struct UeDelays {
  double upload = 0.0;
  double compute = 0.0;
  std::vector<double> relay;       // [p]
  std::vector<double> bs_compute;  // [p]

  /// Relay branch: routes share one transmitter, so their times add.
  double offload_path() const {
    double t = 0;
    for (std::size_t p = 0; p < relay.size(); ++p) t += relay[p] + bs_compute[p];
    return t;
  }
  double total() const { return upload + std::max(compute, offload_path()); }
};

/// tau_comp of one C-UAV: sum over its UEs of upload + max(local, relay + BS).
inline double slot_compute_time(std::span<const UeDelays> per_ue) {
  double t = 0;
  for (const auto& d : per_ue) t += d.total();
  return t;
}

}  // namespace skysim
