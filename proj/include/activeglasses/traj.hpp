// Trajectory representations and retargeting: absolute object trajectories,
// relative head-motion windows, the grasp transform, and the JSONL training
// sample format.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "activeglasses/episode.hpp"
#include "activeglasses/geometry.hpp"

namespace ag {

struct ObjectTrajAbs {
  std::vector<Pose> poses;  // horizon length, world frame
};

struct HeadTrajRel {
  std::vector<Pose> deltas;  // horizon length, each relative to the window base
};

struct GraspTransform {
  Pose obj_to_ee;
};

// World object pose per frame: compose(cam_to_world_i, object_pose_cam_i).
// Runs of up to two missing poses are filled by interpolation (clamped at the
// episode edges); longer gaps throw.
std::vector<Pose> extract_object_traj(const Episode& ep,
                                      const std::vector<Pose>& cam_to_world_per_frame);

// deltas[k] = relative(head[t], head[t + k + 1]); windows past the end repeat
// the final pose. Deltas are invariant to any constant left-multiplication of
// the head stream.
HeadTrajRel relative_head_window(const std::vector<Pose>& head_poses, size_t t, int horizon);

std::vector<Pose> rel_to_abs(const Pose& base, const HeadTrajRel& rel);
HeadTrajRel abs_to_rel(const Pose& base, const std::vector<Pose>& abs);

// obj_to_ee = relative(obj_pose_world, ee_pose_world); invariant to a common
// world-frame change of both inputs.
GraspTransform compute_grasp_transform(const Pose& ee_pose_world, const Pose& obj_pose_world);

// ee[k] = compose(obj_poses[k], g.obj_to_ee)
std::vector<Pose> retarget(const ObjectTrajAbs& traj, const GraspTransform& g);

// one line per frame: {cloud_ref, obj_abs, head_rel, terminal, current_obj_pose}
struct TrainingSample {
  std::string cloud_ref;
  std::vector<Pose> obj_abs;
  std::vector<Pose> head_rel;
  int terminal = 0;
  Pose current_obj_pose;  // world frame
};

void write_samples_jsonl(const std::filesystem::path& p,
                         const std::vector<TrainingSample>& samples);
std::vector<TrainingSample> read_samples_jsonl(const std::filesystem::path& p);

}  // namespace ag
