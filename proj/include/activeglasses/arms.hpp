// Serial 6R kinematics for the manipulation and perception arms: forward
// kinematics, damped-least-squares IK with an explicit failure taxonomy, and
// warm-started trajectory following.

#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "activeglasses/geometry.hpp"

namespace ag {

struct Joint {
  Vec3 axis;    // unit, in the joint's local frame
  Pose offset;  // fixed transform from the previous joint frame
  double lo = -3.1, hi = 3.1;  // radians
};

struct JointConfig {
  std::array<double, 6> q{};
};

struct ArmModel {
  std::string name;
  Pose base_pose_world;
  std::array<Joint, 6> joints;
  JointConfig home;

  void validate() const;
};

void to_json(nlohmann::json& j, const ArmModel& a);
void from_json(const nlohmann::json& j, ArmModel& a);

// end-effector pose: base * prod_k (offset_k * Rot(axis_k, q_k))
Pose fk(const ArmModel& arm, const JointConfig& q);

// conservative reach bound from the base (sum of link offsets)
double reach_radius(const ArmModel& arm);

enum class IkStatus { success, max_iters, joint_limit, singular, step_limit };
const char* ik_status_name(IkStatus s);

struct IkConfig {
  double damping0 = 1e-3;
  int max_iters = 100;
  double tol_pos = 1e-5;   // meters
  double tol_rot = 1e-4;   // radians
};

struct IkResult {
  IkStatus status = IkStatus::max_iters;
  JointConfig q;
  int iters = 0;
  double err_pos = 0, err_rot = 0;

  bool ok() const { return status == IkStatus::success; }
};

// Damped least squares with adaptive damping (x10 on error increase, x0.5 on
// success) and per-iteration joint-limit clamping. The 6D task Jacobian is
// built from finite-differenced pose columns. Deterministic.
IkResult ik_dls(const ArmModel& arm, const Pose& target, const JointConfig& q0,
                const IkConfig& cfg = {});

// ik_dls from q0, then from 8 spread seeds, then deterministic random
// restarts; returns the first success or the initial attempt's failure.
IkResult ik_dls_restarts(const ArmModel& arm, const Pose& target, const JointConfig& q0,
                         const IkConfig& cfg = {}, int random_restarts = 24);

// collects successes across the same seed schedule and returns the one with
// the largest normalized distance to the joint limits (a comfortable start
// for subsequent warm tracking); falls back like ik_dls_restarts
IkResult ik_dls_best(const ArmModel& arm, const Pose& target, const JointConfig& q0,
                     const IkConfig& cfg = {}, int random_restarts = 24);

struct FollowResult {
  bool ok = false;
  std::vector<JointConfig> configs;  // one per reached target
  size_t fail_index = 0;
  IkStatus fail_reason = IkStatus::success;
};

// Sequential warm-started IK along the targets; stops at the first failure.
// A solution moving any joint more than max_joint_step from the previous
// waypoint fails with step_limit.
FollowResult follow_trajectory(const ArmModel& arm, const std::vector<Pose>& ee_targets,
                               const JointConfig& q_start, const IkConfig& cfg = {},
                               double max_joint_step = 0.2);

// position inside the reach annulus + loose-tolerance IK from 8 spread seeds
bool reachable(const ArmModel& arm, const Pose& pose);

// the two shipped models; identical structure, different link lengths/limits
ArmModel make_arm_a(const Pose& base_pose_world);
ArmModel make_arm_b(const Pose& base_pose_world);
ArmModel make_arm(const std::string& name, const Pose& base_pose_world);

void save_arm(const ArmModel& arm, const std::filesystem::path& p);
ArmModel load_arm(const std::filesystem::path& p);

}  // namespace ag
