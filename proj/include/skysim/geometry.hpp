#pragma once

#include <cmath>

namespace skysim {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  Vec2 planar() const { return {x, y}; }
};

inline double distance(const Vec3& a, const Vec3& b) {
  return std::sqrt((a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y) + (a.z - b.z) * (a.z - b.z));
}

inline double distance(const Vec2& a, const Vec2& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

inline double planar_distance(const Vec3& a, const Vec3& b) { return distance(a.planar(), b.planar()); }

/// Ground-level disc; blocks flight below `height`.
struct Obstacle {
  Vec2 center;
  double radius = 0.0;
  double height = INFINITY;
};

}  // namespace skysim
