// Core SE(3)/SO(3) value types.
//
// Convention used across the whole project: a Pose named a_to_b maps the
// coordinates of a point expressed in frame a into frame b, as R*v + t.
// Rotations are stored as unit quaternions (w,x,y,z), renormalized and
// sign-canonicalized (w >= 0) after every operation so serialization and
// comparison are deterministic.

#pragma once

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <string>

#include <json.hpp>

namespace ag {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;
};

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Vec3 operator-(const Vec3& a) { return {-a.x, -a.y, -a.z}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a.x, s * a.y, s * a.z}; }
inline Vec3 operator*(const Vec3& a, double s) { return s * a; }

inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm2(const Vec3& a) { return dot(a, a); }
inline double norm(const Vec3& a) { return std::sqrt(norm2(a)); }
Vec3 normalized(const Vec3& a);  // throws on near-zero input
bool finite(const Vec3& a);

// Unit quaternion. Construction does not normalize; use canonical().
struct Quat {
  double w = 1.0, x = 0.0, y = 0.0, z = 0.0;
};

Quat canonical(const Quat& q);  // normalize + fix sign (w >= 0, ties on x,y,z)
Quat quat_mul(const Quat& a, const Quat& b);
inline Quat quat_conj(const Quat& q) { return {q.w, -q.x, -q.y, -q.z}; }
Vec3 quat_rotate(const Quat& q, const Vec3& v);
Quat quat_from_axis_angle(const Vec3& axis, double angle_rad);
Quat quat_from_matrix(const double r[9]);        // row-major 3x3
void quat_to_matrix(const Quat& q, double r[9]); // row-major 3x3
double quat_angle(const Quat& q);                // rotation angle in [0, pi]
inline double quat_dot(const Quat& a, const Quat& b) {
  return a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z;
}

struct Pose {
  Quat q;  // rotation, canonical unit quaternion
  Vec3 t;  // translation, meters

  Pose() = default;
  Pose(const Quat& q_in, const Vec3& t_in) : q(canonical(q_in)), t(t_in) {}
  static Pose identity() { return Pose(); }
};

// apply(compose(a,b), v) == apply(a, apply(b, v))
Pose compose(const Pose& a, const Pose& b);
Pose invert(const Pose& p);
Vec3 apply(const Pose& p, const Vec3& v);
// compose(ref, relative(ref, target)) == target
Pose relative(const Pose& ref, const Pose& target);
// s in [0,1]; translation lerp, rotation shortest-arc slerp. s=0/1 return the
// endpoints bit-exactly. Throws std::invalid_argument outside [0,1].
Pose interpolate(const Pose& a, const Pose& b, double s);

Quat slerp(const Quat& a, const Quat& b, double s);

bool approx_equal(const Pose& a, const Pose& b, double tol_trans, double tol_rot_rad);

// JSON form: {"q":[w,x,y,z],"t":[x,y,z]}
void to_json(nlohmann::json& j, const Pose& p);
void from_json(const nlohmann::json& j, Pose& p);
void to_json(nlohmann::json& j, const Vec3& v);
void from_json(const nlohmann::json& j, Vec3& v);

// Binary form: 7 little-endian IEEE doubles, order w,x,y,z,tx,ty,tz.
void write_pose(std::ostream& os, const Pose& p);
Pose read_pose(std::istream& is);

}  // namespace ag
