#include "activeglasses/geometry.hpp"

#include <bit>
#include <istream>
#include <ostream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "binary pose serialization assumes a little-endian host");

namespace ag {

Vec3 normalized(const Vec3& a) {
  const double n = norm(a);
  if (n < 1e-300) throw std::invalid_argument("normalized: zero-length vector");
  return {a.x / n, a.y / n, a.z / n};
}

bool finite(const Vec3& a) {
  return std::isfinite(a.x) && std::isfinite(a.y) && std::isfinite(a.z);
}

namespace {
bool needs_sign_flip(const Quat& q) {
  return q.w < 0.0 ||
         (q.w == 0.0 && (q.x < 0.0 || (q.x == 0.0 && (q.y < 0.0 || (q.y == 0.0 && q.z < 0.0)))));
}
}  // namespace

Quat canonical(const Quat& q) {
  const double n2 = q.w * q.w + q.x * q.x + q.y * q.y + q.z * q.z;
  if (n2 < 1e-300) throw std::invalid_argument("canonical: zero quaternion");
  // already unit and sign-canonical: keep the exact bits (serialization
  // round trips depend on this)
  if (std::abs(n2 - 1.0) < 1e-12 && !needs_sign_flip(q)) return q;
  const double n = std::sqrt(n2);
  Quat r{q.w / n, q.x / n, q.y / n, q.z / n};
  if (needs_sign_flip(r)) {
    r.w = -r.w;
    r.x = -r.x;
    r.y = -r.y;
    r.z = -r.z;
  }
  return r;
}

Quat quat_mul(const Quat& a, const Quat& b) {
  return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
          a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
          a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
          a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
}

Vec3 quat_rotate(const Quat& q, const Vec3& v) {
  // v' = v + w*(2 u x v) + u x (2 u x v), u = vector part
  const Vec3 u{q.x, q.y, q.z};
  const Vec3 t = 2.0 * cross(u, v);
  return v + q.w * t + cross(u, t);
}

Quat quat_from_axis_angle(const Vec3& axis, double angle_rad) {
  const Vec3 u = normalized(axis);
  const double h = 0.5 * angle_rad;
  const double s = std::sin(h);
  return canonical(Quat{std::cos(h), u.x * s, u.y * s, u.z * s});
}

Quat quat_from_matrix(const double r[9]) {
  // Shepperd's method: pick the largest diagonal combination.
  const double tr = r[0] + r[4] + r[8];
  Quat q;
  if (tr > 0.0) {
    double s = std::sqrt(tr + 1.0) * 2.0;
    q.w = 0.25 * s;
    q.x = (r[7] - r[5]) / s;
    q.y = (r[2] - r[6]) / s;
    q.z = (r[3] - r[1]) / s;
  } else if (r[0] > r[4] && r[0] > r[8]) {
    double s = std::sqrt(1.0 + r[0] - r[4] - r[8]) * 2.0;
    q.w = (r[7] - r[5]) / s;
    q.x = 0.25 * s;
    q.y = (r[1] + r[3]) / s;
    q.z = (r[2] + r[6]) / s;
  } else if (r[4] > r[8]) {
    double s = std::sqrt(1.0 + r[4] - r[0] - r[8]) * 2.0;
    q.w = (r[2] - r[6]) / s;
    q.x = (r[1] + r[3]) / s;
    q.y = 0.25 * s;
    q.z = (r[5] + r[7]) / s;
  } else {
    double s = std::sqrt(1.0 + r[8] - r[0] - r[4]) * 2.0;
    q.w = (r[3] - r[1]) / s;
    q.x = (r[2] + r[6]) / s;
    q.y = (r[5] + r[7]) / s;
    q.z = 0.25 * s;
  }
  return canonical(q);
}

void quat_to_matrix(const Quat& q, double r[9]) {
  const double ww = q.w * q.w, xx = q.x * q.x, yy = q.y * q.y, zz = q.z * q.z;
  const double wx = q.w * q.x, wy = q.w * q.y, wz = q.w * q.z;
  const double xy = q.x * q.y, xz = q.x * q.z, yz = q.y * q.z;
  r[0] = ww + xx - yy - zz;
  r[1] = 2.0 * (xy - wz);
  r[2] = 2.0 * (xz + wy);
  r[3] = 2.0 * (xy + wz);
  r[4] = ww - xx + yy - zz;
  r[5] = 2.0 * (yz - wx);
  r[6] = 2.0 * (xz - wy);
  r[7] = 2.0 * (yz + wx);
  r[8] = ww - xx - yy + zz;
}

double quat_angle(const Quat& q) {
  const double v = std::sqrt(q.x * q.x + q.y * q.y + q.z * q.z);
  return 2.0 * std::atan2(v, std::abs(q.w));
}

Pose compose(const Pose& a, const Pose& b) {
  return Pose(quat_mul(a.q, b.q), quat_rotate(a.q, b.t) + a.t);
}

Pose invert(const Pose& p) {
  const Quat c = quat_conj(p.q);
  return Pose(c, -quat_rotate(c, p.t));
}

Vec3 apply(const Pose& p, const Vec3& v) { return quat_rotate(p.q, v) + p.t; }

Pose relative(const Pose& ref, const Pose& target) { return compose(invert(ref), target); }

Quat slerp(const Quat& a, const Quat& b, double s) {
  Quat bb = b;
  double d = quat_dot(a, b);
  if (d < 0.0) {
    bb = {-b.w, -b.x, -b.y, -b.z};
    d = -d;
  }
  if (d > 1.0 - 1e-12) {
    // nearly parallel: linear blend then renormalize
    return canonical(Quat{a.w + s * (bb.w - a.w), a.x + s * (bb.x - a.x),
                          a.y + s * (bb.y - a.y), a.z + s * (bb.z - a.z)});
  }
  const double theta = std::acos(d);
  const double sin_t = std::sin(theta);
  const double ca = std::sin((1.0 - s) * theta) / sin_t;
  const double cb = std::sin(s * theta) / sin_t;
  return canonical(Quat{ca * a.w + cb * bb.w, ca * a.x + cb * bb.x,
                        ca * a.y + cb * bb.y, ca * a.z + cb * bb.z});
}

Pose interpolate(const Pose& a, const Pose& b, double s) {
  if (!(s >= 0.0 && s <= 1.0)) throw std::invalid_argument("interpolate: s outside [0,1]");
  if (s == 0.0) return a;
  if (s == 1.0) return b;
  Pose r;
  r.q = slerp(a.q, b.q, s);
  r.t = {a.t.x + s * (b.t.x - a.t.x), a.t.y + s * (b.t.y - a.t.y), a.t.z + s * (b.t.z - a.t.z)};
  return r;
}

bool approx_equal(const Pose& a, const Pose& b, double tol_trans, double tol_rot_rad) {
  if (norm(a.t - b.t) > tol_trans) return false;
  return quat_angle(quat_mul(quat_conj(a.q), b.q)) <= tol_rot_rad;
}

void to_json(nlohmann::json& j, const Vec3& v) { j = nlohmann::json::array({v.x, v.y, v.z}); }

void from_json(const nlohmann::json& j, Vec3& v) {
  v.x = j.at(0).get<double>();
  v.y = j.at(1).get<double>();
  v.z = j.at(2).get<double>();
}

void to_json(nlohmann::json& j, const Pose& p) {
  j = nlohmann::json{{"q", {p.q.w, p.q.x, p.q.y, p.q.z}}, {"t", {p.t.x, p.t.y, p.t.z}}};
}

void from_json(const nlohmann::json& j, Pose& p) {
  const auto& q = j.at("q");
  const auto& t = j.at("t");
  p.q = canonical(Quat{q.at(0).get<double>(), q.at(1).get<double>(), q.at(2).get<double>(),
                       q.at(3).get<double>()});
  p.t = {t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>()};
}

void write_pose(std::ostream& os, const Pose& p) {
  const double vals[7] = {p.q.w, p.q.x, p.q.y, p.q.z, p.t.x, p.t.y, p.t.z};
  os.write(reinterpret_cast<const char*>(vals), sizeof(vals));
}

Pose read_pose(std::istream& is) {
  double vals[7];
  is.read(reinterpret_cast<char*>(vals), sizeof(vals));
  if (!is) throw std::runtime_error("read_pose: truncated stream");
  Pose p;
  p.q = canonical(Quat{vals[0], vals[1], vals[2], vals[3]});
  p.t = {vals[4], vals[5], vals[6]};
  return p;
}

}  // namespace ag
