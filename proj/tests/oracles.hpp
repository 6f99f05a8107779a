// Test-only oracles, kept independent of the library's implementation paths:
// 4x4 homogeneous matrix algebra, Gauss-Jordan inversion, brute-force grids.

#pragma once

#include <array>
#include <cmath>
#include <stdexcept>

#include "activeglasses/geometry.hpp"
#include "activeglasses/rng.hpp"

namespace oracle {

using Mat4 = std::array<double, 16>;

inline Mat4 mat4_identity() {
  Mat4 m{};
  m[0] = m[5] = m[10] = m[15] = 1.0;
  return m;
}

inline Mat4 mat4_mul(const Mat4& a, const Mat4& b) {
  Mat4 c{};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      double s = 0.0;
      for (int k = 0; k < 4; ++k) s += a[i * 4 + k] * b[k * 4 + j];
      c[i * 4 + j] = s;
    }
  return c;
}

inline std::array<double, 4> mat4_apply(const Mat4& m, const std::array<double, 4>& v) {
  std::array<double, 4> r{};
  for (int i = 0; i < 4; ++i)
    for (int k = 0; k < 4; ++k) r[i] += m[i * 4 + k] * v[k];
  return r;
}

// general Gauss-Jordan inverse with partial pivoting
inline Mat4 mat4_inverse(const Mat4& in) {
  Mat4 a = in;
  Mat4 inv = mat4_identity();
  for (int col = 0; col < 4; ++col) {
    int piv = col;
    for (int r = col + 1; r < 4; ++r)
      if (std::abs(a[r * 4 + col]) > std::abs(a[piv * 4 + col])) piv = r;
    if (std::abs(a[piv * 4 + col]) < 1e-14) throw std::runtime_error("singular matrix");
    if (piv != col)
      for (int k = 0; k < 4; ++k) {
        std::swap(a[piv * 4 + k], a[col * 4 + k]);
        std::swap(inv[piv * 4 + k], inv[col * 4 + k]);
      }
    const double d = a[col * 4 + col];
    for (int k = 0; k < 4; ++k) {
      a[col * 4 + k] /= d;
      inv[col * 4 + k] /= d;
    }
    for (int r = 0; r < 4; ++r) {
      if (r == col) continue;
      const double f = a[r * 4 + col];
      for (int k = 0; k < 4; ++k) {
        a[r * 4 + k] -= f * a[col * 4 + k];
        inv[r * 4 + k] -= f * inv[col * 4 + k];
      }
    }
  }
  return inv;
}

// own quaternion->matrix expansion (textbook form, written out here so the
// oracle does not share code with ag::quat_to_matrix)
inline Mat4 pose_to_mat4(const ag::Pose& p) {
  const double w = p.q.w, x = p.q.x, y = p.q.y, z = p.q.z;
  Mat4 m = mat4_identity();
  m[0] = 1.0 - 2.0 * (y * y + z * z);
  m[1] = 2.0 * (x * y - w * z);
  m[2] = 2.0 * (x * z + w * y);
  m[4] = 2.0 * (x * y + w * z);
  m[5] = 1.0 - 2.0 * (x * x + z * z);
  m[6] = 2.0 * (y * z - w * x);
  m[8] = 2.0 * (x * z - w * y);
  m[9] = 2.0 * (y * z + w * x);
  m[10] = 1.0 - 2.0 * (x * x + y * y);
  m[3] = p.t.x;
  m[7] = p.t.y;
  m[11] = p.t.z;
  return m;
}

inline double mat4_max_abs_diff(const Mat4& a, const Mat4& b) {
  double d = 0.0;
  for (int i = 0; i < 16; ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

inline ag::Vec3 random_unit_vec(ag::Rng& rng) {
  while (true) {
    ag::Vec3 v{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const double n = ag::norm(v);
    if (n > 0.1 && n <= 1.0) return (1.0 / n) * v;
  }
}

inline ag::Pose random_pose(ag::Rng& rng, double trans_scale = 2.0) {
  const ag::Vec3 axis = random_unit_vec(rng);
  const double angle = rng.uniform(-3.1, 3.1);
  const ag::Vec3 t{rng.uniform(-trans_scale, trans_scale), rng.uniform(-trans_scale, trans_scale),
                   rng.uniform(-trans_scale, trans_scale)};
  return ag::Pose(ag::quat_from_axis_angle(axis, angle), t);
}

}  // namespace oracle
