// Synthetic tabletop world. Analytic sphere/box/cylinder primitives with
// exact ray intersections stand in for the real perception stack: the
// renderer supplies depth, occlusion-aware masks and exact object poses, and
// the demo generator scripts object + head motion into raw sensor streams.

#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "activeglasses/cloud.hpp"
#include "activeglasses/geometry.hpp"
#include "activeglasses/rng.hpp"

namespace ag {

enum class PrimKind { sphere, box, cylinder };

// dims: sphere -> x = radius; box -> half extents; cylinder -> x = radius,
// z = half height (axis along local z).
struct Primitive {
  std::string id;
  PrimKind kind = PrimKind::box;
  Pose pose;  // local -> scene
  Vec3 dims;

  void validate() const;
};

struct CalibSphere {
  Vec3 center;  // scene frame
  double radius = 0.02;
};

struct SceneSpec {
  std::array<CalibSphere, 3> calib_spheres;  // order b0, b1, b2
  std::vector<Primitive> objects;
  std::vector<Primitive> occluders;
  std::string target_object_id;
  Pose target_pose;  // scene frame, goal pose of the target object
  std::string task_kind;  // "slot" | "pour"
  uint64_t seed = 0;

  void validate() const;  // unique ids, non-degenerate primitives
  const Primitive* find(const std::string& id) const;
  Primitive* find(const std::string& id);
};

void to_json(nlohmann::json& j, const SceneSpec& s);
void from_json(const nlohmann::json& j, SceneSpec& s);

// ids the calibration spheres are rendered under
extern const std::array<const char*, 3> kCalibSphereIds;

// ---- rendering ------------------------------------------------------------

// Per-pixel id of the nearest primitive (-1 = miss). Ids index an internal
// flattening: objects, occluders, calib spheres, extras in that order.
struct IdBuffer {
  int width = 0, height = 0;
  std::vector<int32_t> ids;
};

struct RenderResult {
  DepthFrame depth;
  IdBuffer id_buffer;
  std::vector<std::string> id_names;  // flattened primitive ids

  Mask mask_of(const std::string& id) const;  // throws on unknown id
};

// extras: transient primitives rendered into the frame (demonstrator hand)
RenderResult render_scene(const SceneSpec& scene, const Pose& cam_pose_scene,
                          const Intrinsics& intr,
                          const std::vector<Primitive>& extras = {});

DepthFrame render_depth(const SceneSpec& scene, const Pose& cam_pose_scene,
                        const Intrinsics& intr);

Mask render_mask(const SceneSpec& scene, const Pose& cam_pose_scene, const Intrinsics& intr,
                 const std::string& target_id);

// depth along the ray through fractional pixel (u,v); NaN on miss
double render_depth_at(const SceneSpec& scene, const Pose& cam_pose_scene,
                       const Intrinsics& intr, double u, double v,
                       const std::vector<Primitive>& extras = {});

// exact camera-frame pose of target_id, optionally perturbed by zero-mean noise
struct PoseNoise {
  double sigma_trans = 0.0;  // meters, per axis
  double sigma_rot = 0.0;    // radians, rotation-vector magnitude scale
};
Pose oracle_object_pose(const SceneSpec& scene, const Pose& cam_pose_scene,
                        const std::string& target_id, const PoseNoise& noise = {},
                        Rng* rng = nullptr);

// sampled scene surface for export / viewers
LabeledCloud sample_scene_surface(const SceneSpec& scene, double spacing);

// ---- demonstration scripting ----------------------------------------------

struct DemoPhase {
  std::string name;
  Pose object_target;  // scene frame waypoint of the target object
  double duration_s = 1.0;
};

struct DemoScript {
  std::vector<DemoPhase> phases;
  Vec3 cam_start;          // camera start position, scene frame
  Vec3 cam_end;            // lean-in end position
  double peer_amplitude = 0.08;  // lateral arc of the head path
  Vec3 hand_offset{0.0, 0.0, 0.06};  // hand blob offset in the object frame
  double hand_radius = 0.035;

  void validate() const;  // positive durations
  double total_duration() const;
};

void to_json(nlohmann::json& j, const DemoScript& s);
void from_json(const nlohmann::json& j, DemoScript& s);

struct StreamRates {
  double pose_hz = 60.0;
  double frame_hz = 10.0;
  double pose_time_jitter = 0.0;  // uniform +- jitter on pose timestamps
};

struct TimedPoseSample {
  double timestamp = 0;
  Pose pose;  // head pose, tracking frame
};

struct RawFrame {
  double timestamp = 0;
  DepthFrame depth;
  Mask hand_mask;
  Mask object_mask;
  std::optional<Pose> object_pose_cam;
};

struct RawStreams {
  std::vector<TimedPoseSample> head_poses;
  std::vector<RawFrame> frames;
  // frame-0 calibration sphere data, consumed by the rig builder
  std::array<Mask, 3> sphere_masks_frame0;
  DepthFrame depth_frame0;
  Pose glass_to_cam;       // fixed mount used for this recording
  Pose tracking_offset;    // scene -> tracking frame of the head stream
};

// Deterministic per seed. Object follows the script phases with smooth
// interpolation; the camera leans in from cam_start to cam_end while keeping
// object and target in view (>= 90% of frames asserted). Throws if a waypoint
// leaves the scene bounds or the calibration spheres are not visible at t=0.
RawStreams generate_demo(const SceneSpec& scene, const DemoScript& script,
                         const StreamRates& rates, const Intrinsics& intr, uint64_t seed);

// the object's scripted pose at time t (scene frame)
Pose demo_object_pose(const SceneSpec& scene, const DemoScript& script, double t);

// the head-path camera pose for a given object pose and task progress in [0,1]
Pose demo_camera_pose(const SceneSpec& scene, const DemoScript& script, const Pose& obj_pose,
                      double progress);

// progress measure used by the head path: fraction of the object's initial
// goal distance already covered
double demo_progress(const SceneSpec& scene, const Pose& obj_start, const Pose& obj_now);

// ---- randomization ---------------------------------------------------------

// A group of primitives displaced rigidly together by a uniform translation
// and a yaw about the group anchor (the target position when carries_target,
// else the first member's position).
struct RandomizationGroup {
  std::vector<std::string> ids;
  bool carries_target = false;
  Vec3 trans_lo, trans_hi;
  double yaw_lo = 0.0, yaw_hi = 0.0;
};

void to_json(nlohmann::json& j, const RandomizationGroup& g);
void from_json(const nlohmann::json& j, RandomizationGroup& g);

// Uniform sampling within the group ranges; rejects overlapping layouts and
// throws after 100 attempts. Deterministic per seed.
SceneSpec randomize_scene(const SceneSpec& base, const std::vector<RandomizationGroup>& groups,
                          uint64_t seed);

bool primitives_overlap(const Primitive& a, const Primitive& b);

// ---- stock scenes -----------------------------------------------------------

SceneSpec make_slot_scene();
SceneSpec make_pour_scene();
SceneSpec make_task_scene(const std::string& task_kind);
DemoScript make_demo_script(const SceneSpec& scene);
std::vector<RandomizationGroup> default_randomization(const SceneSpec& scene);
Intrinsics default_intrinsics();

// scene -> calibrated-world map implied by the true calibration sphere centers
Pose world_from_scene(const SceneSpec& scene);

}  // namespace ag
