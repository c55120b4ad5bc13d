#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "skysim/error.hpp"
#include "skysim/geometry.hpp"
#include "skysim/scenario.hpp"

namespace skysim {

/// Rotary-wing propulsion power at speed v:
/// c1 (1 + 3v^2/v_tip^2) + c2 sqrt(1 + v^4/(4 v0^4) - v^2/(2 v0^2)) + c3 v^3 / 2.
inline double propulsion_coefficient(double v, double c1, double c2, double c3, double v_tip, double v0) {
  if (!(v >= 0)) throw DomainError("propulsion_coefficient: speed must be >= 0");
  const double v2 = v * v;
  const double v02 = v0 * v0;
  const double radicand = 1.0 + v2 * v2 / (4.0 * v02 * v02) - v2 / (2.0 * v02);
  if (radicand < 0) throw DomainError("propulsion_coefficient: negative radicand");
  return c1 * (1.0 + 3.0 * v2 / (v_tip * v_tip)) + c2 * std::sqrt(radicand) + 0.5 * c3 * v2 * v;
}

inline double propulsion_coefficient(double v, const EnergyParams& e) {
  return propulsion_coefficient(v, e.c1, e.c2, e.c3, e.tip_speed_mps, e.induced_velocity_mps);
}

inline double hover_coefficient(const EnergyParams& e) { return propulsion_coefficient(0.0, e); }

/// alpha_move * move_time + alpha_hover * (tau - move_time).
inline double slot_propulsion_energy(double move_time, double tau, double alpha_move, double alpha_hover) {
  if (!(move_time >= 0) || move_time > tau) throw DomainError("slot_propulsion_energy: move_time must lie in [0, tau]");
  return alpha_move * move_time + alpha_hover * (tau - move_time);
}

struct MoveResult {
  Vec3 position;
  double distance = 0.0;   // flown, after clamping and clipping
  double move_time = 0.0;  // s
  bool clamped = false;    // requested l exceeded l_max
  bool clipped = false;    // stopped early by the area boundary or an obstacle
};

namespace detail {

/// Largest t in [0, 1] such that p + t d stays inside [0, side]^2.
inline double box_exit(Vec2 p, Vec2 d, double side) {
  double t = 1.0;
  auto limit = [&t](double x, double dx, double lo, double hi) {
    if (dx > 0) t = std::min(t, (hi - x) / dx);
    if (dx < 0) t = std::min(t, (lo - x) / dx);
  };
  limit(p.x, d.x, 0.0, side);
  limit(p.y, d.y, 0.0, side);
  return std::max(t, 0.0);
}

/// First t in [0, 1] at which p + t d touches the disc, or 1 when it never does.
/// A path starting inside the disc is free to leave it.
inline double disc_contact(Vec2 p, Vec2 d, const Obstacle& o) {
  const double fx = p.x - o.center.x;
  const double fy = p.y - o.center.y;
  const double c = fx * fx + fy * fy - o.radius * o.radius;
  if (c <= 0) return 1.0;
  const double a = d.x * d.x + d.y * d.y;
  if (a == 0) return 1.0;
  const double b = 2.0 * (fx * d.x + fy * d.y);
  const double disc = b * b - 4 * a * c;
  if (disc < 0) return 1.0;
  const double t = (-b - std::sqrt(disc)) / (2 * a);
  return t >= 0 && t <= 1 ? t : 1.0;
}

}  // namespace detail

/// Planar move by l in direction rho at fixed altitude. l > l_max is clamped;
/// the path stops at the area boundary and at the first obstacle taller than the UAV.
inline MoveResult apply_move(const Vec3& from, double rho, double l, double l_max, double speed, double area_side,
                             std::span<const Obstacle> obstacles = {}) {
  if (!(l >= 0)) throw DomainError("apply_move: distance must be >= 0");
  if (!(speed > 0)) throw DomainError("apply_move: speed must be > 0");
  MoveResult out;
  if (l > l_max) {
    l = l_max;
    out.clamped = true;
  }
  const Vec2 p = from.planar();
  const Vec2 d{l * std::cos(rho), l * std::sin(rho)};
  double t = detail::box_exit(p, d, area_side);
  for (const auto& o : obstacles)
    if (o.height > from.z) t = std::min(t, detail::disc_contact(p, d, o));
  out.clipped = t < 1.0;
  out.position = {std::clamp(p.x + t * d.x, 0.0, area_side), std::clamp(p.y + t * d.y, 0.0, area_side), from.z};
  out.distance = t * l;
  out.move_time = out.distance / speed;
  return out;
}

using UavPair = std::pair<int, int>;

/// Same-kind pairs closer than d_min (strict).
inline std::vector<UavPair> check_separation(std::span<const UavState> uavs, double d_min) {
  std::vector<UavPair> out;
  for (std::size_t i = 0; i < uavs.size(); ++i)
    for (std::size_t j = i + 1; j < uavs.size(); ++j)
      if (uavs[i].kind == uavs[j].kind && distance(uavs[i].position, uavs[j].position) < d_min)
        out.emplace_back(static_cast<int>(i), static_cast<int>(j));
  return out;
}

/// Same-kind pairs breaking the coverage rule. `disjoint`: C1 + C2 > d is a
/// violation (footprints must not overlap). `overlap`: C1 + C2 < d is a violation.
inline std::vector<UavPair> check_coverage_overlap(std::span<const UavState> uavs,
                                                   CoverageRule rule = CoverageRule::disjoint) {
  std::vector<UavPair> out;
  for (std::size_t i = 0; i < uavs.size(); ++i)
    for (std::size_t j = i + 1; j < uavs.size(); ++j) {
      if (uavs[i].kind != uavs[j].kind) continue;
      const double reach = uavs[i].coverage_radius + uavs[j].coverage_radius;
      const double d = planar_distance(uavs[i].position, uavs[j].position);
      const bool bad = rule == CoverageRule::disjoint ? reach > d : reach < d;
      if (bad) out.emplace_back(static_cast<int>(i), static_cast<int>(j));
    }
  return out;
}

}  // namespace skysim
