#pragma once

#include <array>
#include <cmath>
#include <cstdint>

#include "tpn/tensor.hpp"

namespace tpn {

struct Vec3 {
  double x = 0, y = 0, z = 0;
};

inline Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
inline double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(Vec3 a, Vec3 b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(Vec3 a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalized(Vec3 a) { return (1.0 / norm(a)) * a; }

// Plane coordinates of a point, in the order xy, xz, yz. Each pair is
// (along plane width, along plane height).
using PlaneCoords = std::array<std::array<double, 2>, 3>;

inline PlaneCoords project_point(Vec3 p, double bound) {
  return {{{p.x / bound, p.y / bound}, {p.x / bound, p.z / bound}, {p.y / bound, p.z / bound}}};
}

struct TriPlaneConfig {
  int64_t channels = 8;
  int64_t resolution = 32;
  double bound = 1.0;
};

// Three axis-aligned feature planes (xy, xz, yz) stored as one [3,C,P,P]
// tensor, covering the cube [-bound, bound]^3.
class TriPlane {
 public:
  TriPlane() = default;
  TriPlane(Tensor planes, double bound);

  static TriPlane zeros(const TriPlaneConfig& cfg, bool requires_grad = false);

  const Tensor& planes() const { return planes_; }
  Tensor& planes() { return planes_; }
  int64_t channels() const { return planes_.dim(1); }
  int64_t resolution() const { return planes_.dim(2); }
  double bound() const { return bound_; }
  // One plane as [C,P,P]; 0 = xy, 1 = xz, 2 = yz.
  Tensor plane(int index) const;

 private:
  Tensor planes_;
  double bound_ = 1.0;
};

// Sum of the bilinear features of the three planes at each point.
// planes [3,C,P,P], points [M,3] (not differentiated) -> [M,C].
template <class T>
BasicTensor<T> sample_planes(const BasicTensor<T>& planes, const BasicTensor<T>& points, T bound);

Tensor sample_triplane(const TriPlane& tri, const Tensor& points);

// Plane-wise sum; inputs are left untouched.
TriPlane apply_offsets(const TriPlane& base, const TriPlane& offsets);

}  // namespace tpn
