#include "activeglasses/traj.hpp"

#include <fstream>
#include <stdexcept>

namespace ag {

std::vector<Pose> extract_object_traj(const Episode& ep,
                                      const std::vector<Pose>& cam_to_world_per_frame) {
  const size_t n = ep.frames.size();
  if (cam_to_world_per_frame.size() != n)
    throw std::invalid_argument("extract_object_traj: anchor count != frame count");

  std::vector<Pose> world(n);
  std::vector<bool> have(n, false);
  for (size_t i = 0; i < n; ++i) {
    if (!ep.frames[i].object_pose_cam) continue;
    world[i] = compose(cam_to_world_per_frame[i], *ep.frames[i].object_pose_cam);
    have[i] = true;
  }

  // fill gaps of up to two consecutive missing frames
  size_t i = 0;
  while (i < n) {
    if (have[i]) {
      ++i;
      continue;
    }
    size_t j = i;
    while (j < n && !have[j]) ++j;
    const size_t gap = j - i;
    if (gap > 2)
      throw std::runtime_error("extract_object_traj: gap of " + std::to_string(gap) +
                               " consecutive missing object poses at frame " + std::to_string(i));
    const bool has_prev = i > 0;
    const bool has_next = j < n;
    if (!has_prev && !has_next)
      throw std::runtime_error("extract_object_traj: no object poses in episode");
    for (size_t k = i; k < j; ++k) {
      if (has_prev && has_next) {
        const double s = static_cast<double>(k - (i - 1)) / static_cast<double>(j - (i - 1));
        world[k] = interpolate(world[i - 1], world[j], s);
      } else if (has_prev) {
        world[k] = world[i - 1];  // trailing gap: clamp
      } else {
        world[k] = world[j];  // leading gap: clamp
      }
      have[k] = true;
    }
    i = j;
  }
  return world;
}

HeadTrajRel relative_head_window(const std::vector<Pose>& head_poses, size_t t, int horizon) {
  if (head_poses.empty()) throw std::invalid_argument("relative_head_window: empty trajectory");
  if (t >= head_poses.size())
    throw std::invalid_argument("relative_head_window: index out of range");
  if (horizon < 1) throw std::invalid_argument("relative_head_window: horizon must be >= 1");
  const Pose inv_base = invert(head_poses[t]);
  HeadTrajRel out;
  out.deltas.reserve(horizon);
  const size_t last = head_poses.size() - 1;
  for (int k = 0; k < horizon; ++k) {
    const size_t idx = std::min(t + static_cast<size_t>(k) + 1, last);
    out.deltas.push_back(compose(inv_base, head_poses[idx]));
  }
  return out;
}

std::vector<Pose> rel_to_abs(const Pose& base, const HeadTrajRel& rel) {
  std::vector<Pose> abs;
  abs.reserve(rel.deltas.size());
  for (const Pose& d : rel.deltas) abs.push_back(compose(base, d));
  return abs;
}

HeadTrajRel abs_to_rel(const Pose& base, const std::vector<Pose>& abs) {
  const Pose inv_base = invert(base);
  HeadTrajRel rel;
  rel.deltas.reserve(abs.size());
  for (const Pose& p : abs) rel.deltas.push_back(compose(inv_base, p));
  return rel;
}

GraspTransform compute_grasp_transform(const Pose& ee_pose_world, const Pose& obj_pose_world) {
  return GraspTransform{relative(obj_pose_world, ee_pose_world)};
}

std::vector<Pose> retarget(const ObjectTrajAbs& traj, const GraspTransform& g) {
  std::vector<Pose> ee;
  ee.reserve(traj.poses.size());
  for (const Pose& p : traj.poses) ee.push_back(compose(p, g.obj_to_ee));
  return ee;
}

void write_samples_jsonl(const std::filesystem::path& p,
                         const std::vector<TrainingSample>& samples) {
  std::ofstream f(p);
  if (!f) throw std::runtime_error("cannot open for write: " + p.string());
  for (const auto& s : samples) {
    nlohmann::json j{{"cloud_ref", s.cloud_ref},
                     {"obj_abs", s.obj_abs},
                     {"head_rel", s.head_rel},
                     {"terminal", s.terminal},
                     {"current_obj_pose", s.current_obj_pose}};
    f << j.dump() << "\n";
  }
  if (!f) throw std::runtime_error("write failed: " + p.string());
}

std::vector<TrainingSample> read_samples_jsonl(const std::filesystem::path& p) {
  std::ifstream f(p);
  if (!f) throw std::runtime_error("cannot open: " + p.string());
  std::vector<TrainingSample> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    TrainingSample s;
    s.cloud_ref = j.at("cloud_ref").get<std::string>();
    for (const auto& e : j.at("obj_abs")) s.obj_abs.push_back(e.get<Pose>());
    for (const auto& e : j.at("head_rel")) s.head_rel.push_back(e.get<Pose>());
    s.terminal = j.at("terminal").get<int>();
    j.at("current_obj_pose").get_to(s.current_obj_pose);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace ag
