// World-frame calibration from three tabletop spheres, head-pose propagation
// of the camera-to-world transform, and cloud unification.

#pragma once

#include <array>
#include <stdexcept>

#include <json.hpp>

#include "activeglasses/cloud.hpp"
#include "activeglasses/geometry.hpp"

namespace ag {

struct CalibrationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CalibrationRig {
  std::array<Vec3, 3> sphere_centers_cam0;  // b0, b1, b2 in the frame-0 camera
  double sphere_radius = 0.02;
  Pose glass_to_cam;  // fixed mount: glasses-frame coords -> camera coords

  void validate() const;  // throws CalibrationError when the centers are collinear
};

void to_json(nlohmann::json& j, const CalibrationRig& r);
void from_json(const nlohmann::json& j, CalibrationRig& r);

struct WorldAnchor {
  Pose cam0_to_world;
};

// Estimates each sphere center from its segmentation mask and exact depth:
// centroid of the back-projected masked pixels fixes the viewing ray, the
// surface sample nearest that ray is pushed along it by the known radius.
// Throws CalibrationError (naming the sphere index) when a mask has fewer
// than 20 valid-depth pixels.
std::array<Vec3, 3> sphere_centers_from_masks(const DepthFrame& depth,
                                              const std::array<Mask, 3>& masks,
                                              const Intrinsics& intr, double radius);

// World frame from the sphere centers: origin b1, x toward b2, y toward b0
// (re-orthogonalized), z by the right-hand rule. Returns the camera->world
// map: rotation rows are the axes, translation -R*b1.
WorldAnchor world_frame_from_spheres(const Vec3& b0, const Vec3& b1, const Vec3& b2);

// Camera_i -> world via head-pose relative motion: W_i = W_0 * M_i where
// M_i maps camera-i coordinates into camera-0 coordinates. head poses are
// glasses->tracking maps; glass_to_cam is the fixed mount. When head_i equals
// head0 bitwise the anchor is returned unchanged.
Pose propagate_cam_to_world(const WorldAnchor& anchor, const Pose& head0, const Pose& head_i,
                            const Pose& glass_to_cam);

// Maps a camera-tagged cloud into the world frame (kernel-dispatched).
// Throws if the cloud is already world-tagged.
LabeledCloud cloud_to_world(const Pose& cam_to_world, const LabeledCloud& cloud);

}  // namespace ag
