#include "activeglasses/calib.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "activeglasses/kernels.hpp"

namespace ag {

void CalibrationRig::validate() const {
  const Vec3 a = sphere_centers_cam0[2] - sphere_centers_cam0[1];
  const Vec3 b = sphere_centers_cam0[0] - sphere_centers_cam0[1];
  if (norm(cross(a, b)) <= 1e-6)
    throw CalibrationError("calibration rig: sphere centers are collinear");
  if (!(sphere_radius > 0)) throw CalibrationError("calibration rig: radius must be > 0");
}

void to_json(nlohmann::json& j, const CalibrationRig& r) {
  j = nlohmann::json{{"sphere_centers_cam0",
                      {r.sphere_centers_cam0[0], r.sphere_centers_cam0[1], r.sphere_centers_cam0[2]}},
                     {"sphere_radius", r.sphere_radius},
                     {"glass_to_cam", r.glass_to_cam}};
}

void from_json(const nlohmann::json& j, CalibrationRig& r) {
  for (int i = 0; i < 3; ++i) j.at("sphere_centers_cam0").at(i).get_to(r.sphere_centers_cam0[i]);
  r.sphere_radius = j.at("sphere_radius").get<double>();
  j.at("glass_to_cam").get_to(r.glass_to_cam);
}

std::array<Vec3, 3> sphere_centers_from_masks(const DepthFrame& depth,
                                              const std::array<Mask, 3>& masks,
                                              const Intrinsics& intr, double radius) {
  intr.validate();
  if (depth.width != intr.width || depth.height != intr.height)
    throw CalibrationError("sphere_centers_from_masks: depth dimensions mismatch");
  if (!(radius > 0)) throw CalibrationError("sphere_centers_from_masks: radius must be > 0");

  std::array<Vec3, 3> centers;
  for (int s = 0; s < 3; ++s) {
    const Mask& m = masks[s];
    if (m.width != intr.width || m.height != intr.height)
      throw CalibrationError("sphere_centers_from_masks: mask dimensions mismatch, sphere " +
                             std::to_string(s));
    Vec3 sum{};
    size_t n = 0;
    for (int v = 0; v < intr.height; ++v)
      for (int u = 0; u < intr.width; ++u) {
        if (!m.at(u, v)) continue;
        const double d = depth.at(u, v);
        if (!std::isfinite(d) || d <= 0) continue;
        sum = sum + Vec3{(u - intr.cx) * d / intr.fx, (v - intr.cy) * d / intr.fy, d};
        ++n;
      }
    if (n < 20)
      throw CalibrationError("sphere calibration failed: sphere " + std::to_string(s) +
                             " has fewer than 20 valid-depth mask pixels");
    const Vec3 centroid = (1.0 / static_cast<double>(n)) * sum;
    const Vec3 ray = normalized(centroid);

    // surface sample nearest the centroid ray, then push by the radius
    const double pu = intr.fx * centroid.x / centroid.z + intr.cx;
    const double pv = intr.fy * centroid.y / centroid.z + intr.cy;
    double best = std::numeric_limits<double>::infinity();
    Vec3 surf{};
    for (int v = 0; v < intr.height; ++v)
      for (int u = 0; u < intr.width; ++u) {
        if (!m.at(u, v)) continue;
        const double d = depth.at(u, v);
        if (!std::isfinite(d) || d <= 0) continue;
        const double px = (u - pu) * (u - pu) + (v - pv) * (v - pv);
        if (px < best) {
          best = px;
          surf = {(u - intr.cx) * d / intr.fx, (v - intr.cy) * d / intr.fy, d};
        }
      }
    centers[s] = (dot(surf, ray) + radius) * ray;
  }
  return centers;
}

WorldAnchor world_frame_from_spheres(const Vec3& b0, const Vec3& b1, const Vec3& b2) {
  const Vec3 x_raw = b2 - b1;
  const Vec3 y_raw = b0 - b1;
  if (norm(cross(x_raw, y_raw)) <= 1e-6)
    throw CalibrationError("world_frame_from_spheres: sphere centers are collinear");
  const Vec3 xh = normalized(x_raw);
  const Vec3 zh = normalized(cross(xh, normalized(y_raw)));
  const Vec3 yh = cross(zh, xh);  // re-orthogonalized y keeps the rotation in SO(3)
  const double r[9] = {xh.x, xh.y, xh.z, yh.x, yh.y, yh.z, zh.x, zh.y, zh.z};
  const Quat q = quat_from_matrix(r);
  return WorldAnchor{Pose(q, -quat_rotate(q, b1))};
}

Pose propagate_cam_to_world(const WorldAnchor& anchor, const Pose& head0, const Pose& head_i,
                            const Pose& glass_to_cam) {
  const bool same = head0.q.w == head_i.q.w && head0.q.x == head_i.q.x &&
                    head0.q.y == head_i.q.y && head0.q.z == head_i.q.z &&
                    head0.t.x == head_i.t.x && head0.t.y == head_i.t.y && head0.t.z == head_i.t.z;
  if (same) return anchor.cam0_to_world;
  const Pose cam_to_glass = invert(glass_to_cam);
  const Pose c0 = compose(head0, cam_to_glass);   // camera-0 -> tracking
  const Pose ci = compose(head_i, cam_to_glass);  // camera-i -> tracking
  const Pose m_i = relative(c0, ci);              // camera-i -> camera-0
  return compose(anchor.cam0_to_world, m_i);
}

LabeledCloud cloud_to_world(const Pose& cam_to_world, const LabeledCloud& cloud) {
  if (cloud.tag == FrameTag::world)
    throw std::invalid_argument("cloud_to_world: cloud is already world-tagged");
  LabeledCloud out;
  out.tag = FrameTag::world;
  out.colors = cloud.colors;
  out.pixels = cloud.pixels;
  const size_t n = cloud.size();
  out.xs.resize(n);
  out.ys.resize(n);
  out.zs.resize(n);
  double r[9];
  quat_to_matrix(cam_to_world.q, r);
  const double t[3] = {cam_to_world.t.x, cam_to_world.t.y, cam_to_world.t.z};
  kern::transform_points(r, t, cloud.xs.data(), cloud.ys.data(), cloud.zs.data(), out.xs.data(),
                         out.ys.data(), out.zs.data(), n);
  return out;
}

}  // namespace ag
