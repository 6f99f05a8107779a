#include "activeglasses/executor.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "activeglasses/rng.hpp"

namespace ag {

TaskSpec task_spec_for(const SceneSpec& scene) {
  TaskSpec t;
  t.kind = scene.task_kind;
  t.object_id = scene.target_object_id;
  t.target_scene = scene.target_pose;
  // top grasp: the ee approaches from above with its z axis pointing down
  const Quat top_grasp = quat_from_axis_angle(Vec3{1, 0, 0}, M_PI);
  if (scene.task_kind == "slot") {
    t.collision_ids = {"wall_left", "wall_right", "wall_back"};
    t.grasp_offset = Pose(top_grasp, {0, 0, 0.10});
  } else if (scene.task_kind == "pour") {
    t.grasp_offset = Pose(top_grasp, {0, 0, 0.08});
    const Primitive* screen = scene.find("screen");
    const Primitive* cup = scene.find("cup");
    if (!screen || !cup) throw std::invalid_argument("pour scene missing screen/cup");
    t.cross_plane_x = screen->pose.t.x;
    t.cup_center = cup->pose.t;
    t.cup_top_z = cup->pose.t.z + cup->dims.z;
  } else {
    throw std::invalid_argument("unknown task kind: " + scene.task_kind);
  }
  return t;
}

PolicyOutput LearnedPolicy::act(const LabeledCloud& world_cloud,
                                const std::optional<Pose>& current_obj_world, int step) {
  (void)step;
  const PolicyConfig& c = params_.cfg;
  const std::optional<Pose> cond =
      c.condition_on_current_pose ? current_obj_world : std::nullopt;
  PolicyOutput out = predict(params_, world_cloud, cond);
  if (c.object_rep == ObjectRep::relative) {
    if (!current_obj_world)
      throw std::invalid_argument("relative-representation policy needs the current object pose");
    out.obj_traj = rel_to_abs(*current_obj_world, HeadTrajRel{out.obj_traj});
  }
  return out;
}

ScriptedOraclePolicy::ScriptedOraclePolicy(const SceneSpec& scene, const DemoScript& script,
                                           int horizon, int executed_steps, double rate_hz)
    : scene_(scene),
      script_(script),
      horizon_(horizon),
      executed_(executed_steps),
      rate_(rate_hz),
      world_from_scene_(world_from_scene(scene)) {
  total_steps_ = script.total_duration() * rate_hz;
}

PolicyOutput ScriptedOraclePolicy::act(const LabeledCloud&, const std::optional<Pose>&,
                                       int step) {
  const double t_exec = static_cast<double>(step) * executed_ / rate_;
  const Pose obj_start = scene_.find(scene_.target_object_id)->pose;
  PolicyOutput out;
  const Pose obj_now = demo_object_pose(scene_, script_, t_exec);
  const Pose head_now =
      demo_camera_pose(scene_, script_, obj_now, demo_progress(scene_, obj_start, obj_now));
  for (int k = 0; k < horizon_; ++k) {
    const double tk = t_exec + (k + 1) / rate_;
    const Pose obj_k = demo_object_pose(scene_, script_, tk);
    out.obj_traj.push_back(compose(world_from_scene_, obj_k));
    const Pose head_k =
        demo_camera_pose(scene_, script_, obj_k, demo_progress(scene_, obj_start, obj_k));
    out.head_traj.push_back(relative(head_now, head_k));
  }
  // last-five-steps convention at the replay cadence
  out.terminal_score = t_exec * rate_ >= total_steps_ - 5.0 ? 1.0 : 0.0;
  return out;
}

FrozenPolicy::FrozenPolicy(const SceneSpec& nominal_scene, const DemoScript& script, int horizon,
                           int executed_steps, double rate_hz)
    : inner_(nominal_scene, script, horizon, executed_steps, rate_hz) {}

PolicyOutput FrozenPolicy::act(const LabeledCloud& cloud,
                               const std::optional<Pose>& current_obj_world, int step) {
  // never re-calibrated: the nominal-scene trajectory is replayed as-is
  return inner_.act(cloud, current_obj_world, step);
}

void RolloutConfig::validate(int horizon) const {
  if (executed_steps < 1 || executed_steps > horizon)
    throw std::invalid_argument("rollout config: executed_steps outside [1, horizon]");
  if (max_steps < 1) throw std::invalid_argument("rollout config: max_steps must be >= 1");
}

void to_json(nlohmann::json& j, const RolloutConfig& c) {
  j = nlohmann::json{{"max_steps", c.max_steps},
                     {"termination_threshold", c.termination_threshold},
                     {"executed_steps", c.executed_steps},
                     {"workspace", c.workspace},
                     {"intrinsics", c.intr},
                     {"freeze_perception", c.freeze_perception},
                     {"snapshot_every", c.snapshot_every},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, RolloutConfig& c) {
  c.max_steps = j.at("max_steps").get<int>();
  c.termination_threshold = j.at("termination_threshold").get<double>();
  c.executed_steps = j.at("executed_steps").get<int>();
  j.at("workspace").get_to(c.workspace);
  j.at("intrinsics").get_to(c.intr);
  c.freeze_perception = j.at("freeze_perception").get<bool>();
  c.snapshot_every = j.at("snapshot_every").get<int>();
  c.seed = j.at("seed").get<uint64_t>();
}

const char* termination_reason_name(TerminationReason r) {
  switch (r) {
    case TerminationReason::flag: return "flag";
    case TerminationReason::max_steps: return "max_steps";
    case TerminationReason::ik_failure: return "ik_failure";
    case TerminationReason::calibration_failure: return "calibration_failure";
  }
  return "?";
}

ArmRig default_arm_rig(const std::string& manip_name, const Pose& percep_base_jitter) {
  // the perception base sits on a riser behind the table, chosen so the whole
  // demo camera path stays inside its dexterous workspace
  ArmRig rig{make_arm(manip_name, Pose(Quat{}, {0.45, -0.08, 0.15})),
             make_arm_a(compose(Pose(Quat{}, {-0.55, 0.20, 0.15}), percep_base_jitter))};
  rig.percep.name = "percep-arm";
  return rig;
}

namespace {

// 16 surface sample points of a primitive, local frame
std::vector<Vec3> surface_samples(const Primitive& p) {
  std::vector<Vec3> pts;
  if (p.kind == PrimKind::box) {
    const Vec3 e = p.dims;
    for (double sx : {-1.0, 1.0})
      for (double sy : {-1.0, 1.0})
        for (double sz : {-1.0, 1.0}) pts.push_back({sx * e.x, sy * e.y, sz * e.z});
    pts.push_back({e.x, 0, 0});
    pts.push_back({-e.x, 0, 0});
    pts.push_back({0, e.y, 0});
    pts.push_back({0, -e.y, 0});
    pts.push_back({0, 0, e.z});
    pts.push_back({0, 0, -e.z});
    pts.push_back({e.x, e.y, 0});
    pts.push_back({-e.x, -e.y, 0});
  } else if (p.kind == PrimKind::cylinder) {
    const double r = p.dims.x, h = p.dims.z;
    for (int i = 0; i < 7; ++i) {
      const double a = 2 * M_PI * i / 7;
      pts.push_back({r * std::cos(a), r * std::sin(a), h});
      pts.push_back({r * std::cos(a), r * std::sin(a), -h});
    }
    pts.push_back({0, 0, h});
    pts.push_back({0, 0, -h});
  } else {
    const double r = p.dims.x;
    for (int i = 0; i < 8; ++i) {
      const double a = 2 * M_PI * i / 8;
      pts.push_back({r * std::cos(a), r * std::sin(a), 0});
      pts.push_back({r * std::cos(a) * 0.5, r * std::sin(a) * 0.5,
                     (i % 2 ? 1 : -1) * r * 0.8660254});
    }
  }
  pts.resize(16, Vec3{});
  return pts;
}

bool point_inside(const Primitive& p, const Vec3& scene_pt, double margin) {
  const Vec3 q = apply(invert(p.pose), scene_pt);
  switch (p.kind) {
    case PrimKind::sphere: return norm(q) < p.dims.x - margin;
    case PrimKind::box:
      return std::abs(q.x) < p.dims.x - margin && std::abs(q.y) < p.dims.y - margin &&
             std::abs(q.z) < p.dims.z - margin;
    case PrimKind::cylinder:
      return q.x * q.x + q.y * q.y < (p.dims.x - margin) * (p.dims.x - margin) &&
             std::abs(q.z) < p.dims.z - margin;
  }
  return false;
}

bool path_interpenetrates(const SceneSpec& scene, const TaskSpec& task,
                          const std::vector<Pose>& obj_path) {
  const Primitive* obj = scene.find(task.object_id);
  if (!obj) return false;
  const std::vector<Vec3> samples = surface_samples(*obj);
  constexpr double kMargin = 1e-3;  // resting contact is not a collision
  for (const std::string& cid : task.collision_ids) {
    const Primitive* coll = scene.find(cid);
    if (!coll) continue;
    for (const Pose& pose : obj_path)
      for (const Vec3& s : samples)
        if (point_inside(*coll, apply(pose, s), kMargin)) return true;
  }
  return false;
}

double rot_angle_between(const Quat& a, const Quat& b) {
  return quat_angle(quat_mul(quat_conj(a), b));
}

// tilt of the object's local z axis away from the scene vertical
double tilt_angle(const Pose& p) {
  const Vec3 up = quat_rotate(p.q, Vec3{0, 0, 1});
  return std::acos(std::clamp(up.z, -1.0, 1.0));
}

}  // namespace

void evaluate_stages(RolloutResult& result, const TaskSpec& task, const SceneSpec& scene) {
  const auto& path = result.obj_path_scene;
  bool s1 = false, s2 = false, s3 = false;
  if (path.empty()) {
    result.stage1 = result.stage2 = result.stage3 = false;
    return;
  }
  if (task.kind == "slot") {
    for (const Pose& p : path) {
      if (norm(p.t - task.target_scene.t) <= task.approach_radius) s1 = true;
      const double dxy = std::hypot(p.t.x - task.target_scene.t.x, p.t.y - task.target_scene.t.y);
      if (dxy <= task.align_xy && p.t.z >= task.target_scene.t.z - 0.005 &&
          rot_angle_between(p.q, task.target_scene.q) <= task.align_rot)
        s2 = true;
    }
    const Pose& last = path.back();
    s3 = norm(last.t - task.target_scene.t) <= task.final_pos &&
         rot_angle_between(last.q, task.target_scene.q) <= task.final_rot &&
         !path_interpenetrates(scene, task, path);
  } else {
    int hold = 0;
    for (const Pose& p : path) {
      if (p.t.x > task.cross_plane_x) s1 = true;
      const double dxy = std::hypot(p.t.x - task.cup_center.x, p.t.y - task.cup_center.y);
      const bool above = dxy <= task.above_cup_xy && p.t.z >= task.cup_top_z;
      if (above) s2 = true;
      if (above && tilt_angle(p) >= task.tilt_min) {
        if (++hold >= task.hold_steps) s3 = true;
      } else {
        hold = 0;
      }
    }
  }
  result.stage1 = s1;
  result.stage2 = s2 && s1;
  result.stage3 = s3 && s2 && s1;
}

RolloutResult run_rollout(const SceneSpec& scene, PolicyFn& policy, const RolloutConfig& cfg,
                          const ArmRig& arms) {
  scene.validate();
  const TaskSpec task = task_spec_for(scene);

  RolloutResult result;
  SceneSpec world = scene;  // live copy; the target object moves in it
  Primitive* obj = world.find(task.object_id);

  // perception arm to its initial vantage (the demo head-path start)
  const DemoScript script = make_demo_script(scene);
  const Pose cam0_target = demo_camera_pose(scene, script, obj->pose, 0.0);
  const IkResult percep0 = ik_dls_best(arms.percep, cam0_target, arms.percep.home);
  if (!percep0.ok()) {
    result.reason = TerminationReason::calibration_failure;
    result.detail = "initial perception vantage unreachable: " +
                    std::string(ik_status_name(percep0.status));
    return result;
  }
  JointConfig q_percep = percep0.q;
  Pose cam_pose = fk(arms.percep, q_percep);  // camera frame == perception ee frame

  // frame-0 sphere calibration
  WorldAnchor anchor;
  try {
    const RenderResult rr0 = render_scene(world, cam_pose, cfg.intr);
    const std::array<Mask, 3> masks = {rr0.mask_of(kCalibSphereIds[0]),
                                       rr0.mask_of(kCalibSphereIds[1]),
                                       rr0.mask_of(kCalibSphereIds[2])};
    const auto centers =
        sphere_centers_from_masks(rr0.depth, masks, cfg.intr, scene.calib_spheres[0].radius);
    anchor = world_frame_from_spheres(centers[0], centers[1], centers[2]);
  } catch (const std::exception& e) {
    result.reason = TerminationReason::calibration_failure;
    result.detail = e.what();
    return result;
  }
  const Pose head0 = cam_pose;
  const Pose world_from_scene_cal = compose(anchor.cam0_to_world, invert(cam_pose));
  const Pose scene_from_world_cal = invert(world_from_scene_cal);
  result.world_from_scene_cal = world_from_scene_cal;
  policy.on_calibrated(world_from_scene_cal);

  // pre-grasp: rigid attachment at the fixed grasp transform
  const GraspTransform grasp{task.grasp_offset};
  JointConfig q_manip;
  {
    const Pose ee0_scene = compose(obj->pose, grasp.obj_to_ee);
    const IkResult manip0 = ik_dls_best(arms.manip, ee0_scene, arms.manip.home);
    if (!manip0.ok()) {
      result.reason = TerminationReason::ik_failure;
      result.fail_step = 0;
      result.detail = "pre-grasp unreachable: " + std::string(ik_status_name(manip0.status));
      return result;
    }
    q_manip = manip0.q;
  }

  int horizon_seen = 0;
  result.obj_path_scene.push_back(obj->pose);
  result.reason = TerminationReason::max_steps;

  for (int step = 0; step < cfg.max_steps; ++step) {
    // observation: render, back-project, unify, crop
    const Pose w_t = step == 0 ? anchor.cam0_to_world
                               : propagate_cam_to_world(anchor, head0, cam_pose, Pose());
    const DepthFrame depth = render_depth(world, cam_pose, cfg.intr);
    const LabeledCloud cam_cloud = backproject(depth, cfg.intr);
    const LabeledCloud world_cloud = cloud_to_world(w_t, cam_cloud);
    const LabeledCloud cropped = crop_workspace(world_cloud, cfg.workspace);

    // current object pose through the provider + calibrated frame
    const Pose obj_cam = oracle_object_pose(world, cam_pose, task.object_id);
    const Pose current_obj_world = compose(w_t, obj_cam);

    PolicyOutput out = policy.act(cropped, current_obj_world, step);
    horizon_seen = static_cast<int>(out.obj_traj.size());
    if (horizon_seen < 1) throw std::runtime_error("policy produced an empty trajectory");
    cfg.validate(horizon_seen);
    const int exec_n = std::min(cfg.executed_steps, horizon_seen);

    StepLog log;
    log.step = step;
    log.f_t = out.terminal_score;
    log.cam_pose_scene = cam_pose;
    log.obj_pose_scene = obj->pose;
    log.cloud_points = cropped.size();
    log.executed = exec_n;
    if (cfg.snapshot_every > 0 && step % cfg.snapshot_every == 0)
      result.snapshots.emplace_back(step, cropped);

    // manipulation arm: retargeted ee chunk
    ObjectTrajAbs chunk;
    chunk.poses.assign(out.obj_traj.begin(), out.obj_traj.begin() + exec_n);
    const std::vector<Pose> ee_world = retarget(chunk, grasp);
    std::vector<Pose> ee_scene;
    ee_scene.reserve(ee_world.size());
    for (const Pose& p : ee_world) ee_scene.push_back(compose(scene_from_world_cal, p));
    const FollowResult manip_follow = follow_trajectory(arms.manip, ee_scene, q_manip);
    const size_t manip_ok_n = manip_follow.ok ? ee_scene.size() : manip_follow.fail_index;

    // perception arm: head deltas applied to the current ee pose
    std::vector<Pose> percep_targets;
    if (!cfg.freeze_perception) {
      for (int k = 0; k < exec_n && k < static_cast<int>(out.head_traj.size()); ++k)
        percep_targets.push_back(compose(cam_pose, out.head_traj[k]));
    }
    const FollowResult percep_follow =
        follow_trajectory(arms.percep, percep_targets, q_percep);
    log.manip_ik_ok = manip_follow.ok;
    log.percep_ik_ok = percep_follow.ok;

    // the object advances kinematically through the poses the arm reached
    for (size_t k = 0; k < manip_ok_n; ++k) {
      obj->pose = compose(scene_from_world_cal, chunk.poses[k]);
      result.obj_path_scene.push_back(obj->pose);
    }
    if (manip_ok_n > 0) q_manip = manip_follow.configs[manip_ok_n - 1];
    if (!percep_follow.configs.empty()) {
      q_percep = percep_follow.configs.back();
      cam_pose = fk(arms.percep, q_percep);
    }
    result.steps.push_back(log);

    if (!manip_follow.ok || !percep_follow.ok) {
      result.reason = TerminationReason::ik_failure;
      result.fail_step = step;
      const FollowResult& bad = !manip_follow.ok ? manip_follow : percep_follow;
      result.detail = std::string(!manip_follow.ok ? "manipulation" : "perception") +
                      " arm ik failure at chunk index " + std::to_string(bad.fail_index) +
                      " (" + ik_status_name(bad.fail_reason) + ")";
      break;
    }
    if (out.terminal_score > cfg.termination_threshold) {
      result.reason = TerminationReason::flag;
      break;
    }
  }

  evaluate_stages(result, task, scene);
  return result;
}

void save_rollout(const RolloutResult& result, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "steps.jsonl");
    for (const StepLog& s : result.steps) {
      nlohmann::json j{{"step", s.step},
                       {"f_t", s.f_t},
                       {"cam_pose", s.cam_pose_scene},
                       {"obj_pose", s.obj_pose_scene},
                       {"cloud_points", s.cloud_points},
                       {"executed", s.executed},
                       {"manip_ik_ok", s.manip_ik_ok},
                       {"percep_ik_ok", s.percep_ik_ok}};
      f << j.dump() << "\n";
    }
  }
  {
    nlohmann::json j{{"stage1", result.stage1},
                     {"stage2", result.stage2},
                     {"stage3", result.stage3},
                     {"reason", termination_reason_name(result.reason)},
                     {"fail_step", result.fail_step},
                     {"detail", result.detail},
                     {"steps", result.steps.size()},
                     {"world_from_scene", result.world_from_scene_cal}};
    std::ofstream f(dir / "result.json");
    f << j.dump(2) << "\n";
  }
  char name[32];
  for (const auto& [step, cloud] : result.snapshots) {
    std::snprintf(name, sizeof(name), "cloud_%04d.ply", step);
    write_ply(dir / name, cloud);
  }
}

std::string BenchmarkResult::table() const {
  std::ostringstream os;
  os << "stage1 " << stage1 << "/" << n << "\n";
  os << "stage2 " << stage2 << "/" << n << "\n";
  os << "stage3 " << stage3 << "/" << n << "\n";
  return os.str();
}

BenchmarkResult benchmark(const SceneSpec& base_scene,
                          const std::vector<RandomizationGroup>& randomization,
                          const PolicyFactory& factory, int n, const RolloutConfig& cfg,
                          const std::string& manip_arm_name) {
  if (n < 1) throw std::invalid_argument("benchmark: n must be >= 1");
  BenchmarkResult res;
  res.n = n;
  for (int i = 0; i < n; ++i) {
    const uint64_t seed_i = Rng::derive_seed(cfg.seed, static_cast<uint64_t>(i));
    const SceneSpec scene_i = randomize_scene(base_scene, randomization, seed_i);

    // perception base jitter: the wheeled-table randomization at rollout start
    Rng jrng(Rng::derive_seed(seed_i, 0xba5e));
    const Pose jitter(quat_from_axis_angle(Vec3{0, 0, 1}, jrng.uniform(-0.0873, 0.0873)),
                      {jrng.uniform(-0.03, 0.03), jrng.uniform(-0.03, 0.03), 0.0});
    const ArmRig rig = default_arm_rig(manip_arm_name, jitter);

    RolloutConfig rcfg = cfg;
    rcfg.seed = seed_i;
    const std::unique_ptr<PolicyFn> policy = factory(scene_i);
    RolloutResult r = run_rollout(scene_i, *policy, rcfg, rig);
    res.stage1 += r.stage1 ? 1 : 0;
    res.stage2 += r.stage2 ? 1 : 0;
    res.stage3 += r.stage3 ? 1 : 0;
    res.rollouts.push_back(std::move(r));
  }
  return res;
}

}  // namespace ag
