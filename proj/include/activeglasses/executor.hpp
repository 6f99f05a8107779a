// Closed-loop execution against the synthetic world: per-step observation
// pipeline (render -> back-project -> unify -> crop), policy inference,
// chunked dual-arm execution and termination, plus stage-wise evaluation and
// the randomized benchmark harness.

#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "activeglasses/arms.hpp"
#include "activeglasses/calib.hpp"
#include "activeglasses/cloud.hpp"
#include "activeglasses/policy.hpp"
#include "activeglasses/simworld.hpp"
#include "activeglasses/traj.hpp"

namespace ag {

// geometric stage predicates, derived from the (possibly randomized) scene
struct TaskSpec {
  std::string kind;  // "slot" | "pour"
  std::string object_id;
  Pose target_scene;
  std::vector<std::string> collision_ids;  // interpenetration checks (slot walls)
  Pose grasp_offset;  // fixed obj->ee transform used at the pre-grasp handover

  // slot predicates
  double approach_radius = 0.10;
  double align_xy = 0.02;
  double align_rot = 10.0 * M_PI / 180.0;
  double final_pos = 0.005;
  double final_rot = 5.0 * M_PI / 180.0;

  // pour predicates
  double cross_plane_x = 0.0;  // screen plane
  double above_cup_xy = 0.03;
  Vec3 cup_center;
  double cup_top_z = 0.0;
  double tilt_min = 60.0 * M_PI / 180.0;
  int hold_steps = 5;
};

TaskSpec task_spec_for(const SceneSpec& scene);

// The policy boundary the executor drives. act() returns absolute world-frame
// object poses (learned policies convert their representation internally) and
// relative head deltas.
class PolicyFn {
 public:
  virtual ~PolicyFn() = default;
  // called once after frame-0 calibration with the calibrated scene->world map
  virtual void on_calibrated(const Pose& world_from_scene) { (void)world_from_scene; }
  virtual PolicyOutput act(const LabeledCloud& world_cloud,
                           const std::optional<Pose>& current_obj_world, int step) = 0;
};

// learned policy adapter: runs predict(), converts relative output to absolute
class LearnedPolicy : public PolicyFn {
 public:
  explicit LearnedPolicy(PolicyParams params) : params_(std::move(params)) {}
  PolicyOutput act(const LabeledCloud& world_cloud,
                   const std::optional<Pose>& current_obj_world, int step) override;
  const PolicyConfig& config() const { return params_.cfg; }

 private:
  PolicyParams params_;
};

// replays the generating demo script of its scene (upper-bound oracle)
class ScriptedOraclePolicy : public PolicyFn {
 public:
  ScriptedOraclePolicy(const SceneSpec& scene, const DemoScript& script, int horizon,
                       int executed_steps, double rate_hz = 10.0);
  void on_calibrated(const Pose& world_from_scene) override { world_from_scene_ = world_from_scene; }
  PolicyOutput act(const LabeledCloud& world_cloud,
                   const std::optional<Pose>& current_obj_world, int step) override;

 private:
  SceneSpec scene_;
  DemoScript script_;
  int horizon_, executed_;
  double rate_;
  double total_steps_;
  Pose world_from_scene_;
};

// negative control: replays the nominal scene's script no matter what it sees
class FrozenPolicy : public PolicyFn {
 public:
  FrozenPolicy(const SceneSpec& nominal_scene, const DemoScript& script, int horizon,
               int executed_steps, double rate_hz = 10.0);
  PolicyOutput act(const LabeledCloud& world_cloud,
                   const std::optional<Pose>& current_obj_world, int step) override;

 private:
  ScriptedOraclePolicy inner_;
};

struct RolloutConfig {
  int max_steps = 30;
  double termination_threshold = 0.5;
  int executed_steps = 8;  // chunk prefix executed before re-observation
  Box3 workspace = default_workspace();
  Intrinsics intr = default_intrinsics();
  bool freeze_perception = false;  // fixed-camera ablation
  int snapshot_every = 0;          // keep cropped clouds every k steps (0 = off)
  uint64_t seed = 0;

  void validate(int horizon) const;  // 1 <= executed_steps <= horizon
};

void to_json(nlohmann::json& j, const RolloutConfig& c);
void from_json(const nlohmann::json& j, RolloutConfig& c);

enum class TerminationReason { flag, max_steps, ik_failure, calibration_failure };
const char* termination_reason_name(TerminationReason r);

struct StepLog {
  int step = 0;
  double f_t = 0;
  Pose cam_pose_scene;
  Pose obj_pose_scene;
  size_t cloud_points = 0;
  int executed = 0;
  bool manip_ik_ok = true, percep_ik_ok = true;
};

struct RolloutResult {
  std::vector<StepLog> steps;
  std::vector<Pose> obj_path_scene;  // every executed object pose
  std::vector<std::pair<int, LabeledCloud>> snapshots;
  bool stage1 = false, stage2 = false, stage3 = false;
  TerminationReason reason = TerminationReason::max_steps;
  size_t fail_step = 0;
  std::string detail;
  Pose world_from_scene_cal;  // the calibrated frame used during the run
};

struct ArmRig {
  ArmModel manip;
  ArmModel percep;
};

// manip base (0.45,-0.25,0), perception base (-0.45,0.35,0); the perception
// arm is always the arm-A model (cross-embodiment swaps the manipulator)
ArmRig default_arm_rig(const std::string& manip_name, const Pose& percep_base_jitter = Pose());

RolloutResult run_rollout(const SceneSpec& scene, PolicyFn& policy, const RolloutConfig& cfg,
                          const ArmRig& arms);

// fills the stage flags on the result (monotone by construction); the scene
// supplies the primitive geometry for the interpenetration check
void evaluate_stages(RolloutResult& result, const TaskSpec& task, const SceneSpec& scene);

void save_rollout(const RolloutResult& result, const std::filesystem::path& dir);

struct BenchmarkResult {
  int n = 0;
  int stage1 = 0, stage2 = 0, stage3 = 0;
  std::vector<RolloutResult> rollouts;
  std::string table() const;  // per-stage x/N rows
};

using PolicyFactory = std::function<std::unique_ptr<PolicyFn>(const SceneSpec& rollout_scene)>;

// n randomized rollouts (scene randomization + perception-base jitter), with
// per-rollout seeds split from the benchmark seed
BenchmarkResult benchmark(const SceneSpec& base_scene,
                          const std::vector<RandomizationGroup>& randomization,
                          const PolicyFactory& factory, int n, const RolloutConfig& cfg,
                          const std::string& manip_arm_name);

}  // namespace ag
