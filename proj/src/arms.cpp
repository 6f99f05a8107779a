#include "activeglasses/arms.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "activeglasses/rng.hpp"

namespace ag {

namespace {

constexpr double kRotRowWeight = 0.25;  // meters per radian when mixing the 6D error
constexpr double kFdStep = 1e-6;
constexpr double kIterStepCap = 1.0;  // rad, per-iteration infinity-norm cap on dq

// signed rotation vector of the relative rotation taking b to a
Vec3 rotation_vector(const Quat& a, const Quat& b) {
  Quat rel = quat_mul(a, quat_conj(b));
  if (rel.w < 0) rel = {-rel.w, -rel.x, -rel.y, -rel.z};
  const Vec3 v{rel.x, rel.y, rel.z};
  const double vn = norm(v);
  if (vn < 1e-12) return 2.0 * v;  // small-angle limit
  const double angle = 2.0 * std::atan2(vn, rel.w);
  return (angle / vn) * v;
}

struct TaskError {
  Vec3 pos;
  Vec3 rot;
  double pos_norm() const { return norm(pos); }
  double rot_norm() const { return norm(rot); }
  double combined() const {
    const double r = kRotRowWeight;
    return std::sqrt(norm2(pos) + r * r * norm2(rot));
  }
};

TaskError task_error(const Pose& target, const Pose& cur) {
  return {target.t - cur.t, rotation_vector(target.q, cur.q)};
}

JointConfig clamp_limits(const ArmModel& arm, const JointConfig& q) {
  JointConfig out = q;
  for (int i = 0; i < 6; ++i) out.q[i] = std::clamp(q.q[i], arm.joints[i].lo, arm.joints[i].hi);
  return out;
}

// 6x6 linear solve, Gaussian elimination with partial pivoting
bool solve6(double a[6][6], double b[6], double x[6]) {
  int perm[6] = {0, 1, 2, 3, 4, 5};
  for (int col = 0; col < 6; ++col) {
    int piv = col;
    for (int r = col + 1; r < 6; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    if (std::abs(a[piv][col]) < 1e-14) return false;
    if (piv != col) {
      for (int k = 0; k < 6; ++k) std::swap(a[piv][k], a[col][k]);
      std::swap(b[piv], b[col]);
      std::swap(perm[piv], perm[col]);
    }
    for (int r = col + 1; r < 6; ++r) {
      const double f = a[r][col] / a[col][col];
      for (int k = col; k < 6; ++k) a[r][k] -= f * a[col][k];
      b[r] -= f * b[col];
    }
  }
  for (int r = 5; r >= 0; --r) {
    double s = b[r];
    for (int k = r + 1; k < 6; ++k) s -= a[r][k] * x[k];
    x[r] = s / a[r][r];
  }
  return true;
}

// 6x6 task Jacobian by central finite differences of the EE pose; rotation
// rows are the world angular displacement per unit joint angle
void fd_jacobian(const ArmModel& arm, const JointConfig& q, double jac[6][6]) {
  for (int k = 0; k < 6; ++k) {
    JointConfig qp = q, qm = q;
    qp.q[k] += kFdStep;
    qm.q[k] -= kFdStep;
    const Pose pp = fk(arm, qp);
    const Pose pm = fk(arm, qm);
    const Vec3 dp = (1.0 / (2.0 * kFdStep)) * (pp.t - pm.t);
    const Vec3 dr = (1.0 / (2.0 * kFdStep)) * rotation_vector(pp.q, pm.q);
    jac[0][k] = dp.x;
    jac[1][k] = dp.y;
    jac[2][k] = dp.z;
    jac[3][k] = dr.x;
    jac[4][k] = dr.y;
    jac[5][k] = dr.z;
  }
}

// dq = J_w^T (J_w J_w^T + lambda^2 I)^-1 e_w with rotation rows scaled
bool dls_step(const double jac[6][6], const TaskError& e, double lambda, double dq[6]) {
  double jw[6][6];
  for (int k = 0; k < 6; ++k) {
    for (int r = 0; r < 3; ++r) jw[r][k] = jac[r][k];
    for (int r = 3; r < 6; ++r) jw[r][k] = kRotRowWeight * jac[r][k];
  }
  double ew[6] = {e.pos.x, e.pos.y, e.pos.z, kRotRowWeight * e.rot.x, kRotRowWeight * e.rot.y,
                  kRotRowWeight * e.rot.z};
  double jjt[6][6];
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 6; ++c) {
      double s = 0;
      for (int k = 0; k < 6; ++k) s += jw[r][k] * jw[c][k];
      jjt[r][c] = s;
    }
  for (int r = 0; r < 6; ++r) jjt[r][r] += lambda * lambda;
  double y[6];
  if (!solve6(jjt, ew, y)) return false;
  for (int k = 0; k < 6; ++k) {
    double s = 0;
    for (int r = 0; r < 6; ++r) s += jw[r][k] * y[r];
    dq[k] = s;
  }
  return true;
}

}  // namespace

void ArmModel::validate() const {
  for (const auto& j : joints) {
    if (!(j.lo < j.hi)) throw std::invalid_argument("arm " + name + ": joint limits lo >= hi");
    if (std::abs(norm(j.axis) - 1.0) > 1e-9)
      throw std::invalid_argument("arm " + name + ": joint axis not unit length");
  }
}

void to_json(nlohmann::json& j, const ArmModel& a) {
  nlohmann::json joints = nlohmann::json::array();
  for (const auto& jt : a.joints)
    joints.push_back(
        {{"axis", jt.axis}, {"offset", jt.offset}, {"lo", jt.lo}, {"hi", jt.hi}});
  j = nlohmann::json{{"name", a.name},
                     {"base_pose_world", a.base_pose_world},
                     {"joints", joints},
                     {"home_q", a.home.q}};
}

void from_json(const nlohmann::json& j, ArmModel& a) {
  a.name = j.at("name").get<std::string>();
  j.at("base_pose_world").get_to(a.base_pose_world);
  const auto& joints = j.at("joints");
  for (int i = 0; i < 6; ++i) {
    joints.at(i).at("axis").get_to(a.joints[i].axis);
    joints.at(i).at("offset").get_to(a.joints[i].offset);
    a.joints[i].lo = joints.at(i).at("lo").get<double>();
    a.joints[i].hi = joints.at(i).at("hi").get<double>();
  }
  j.at("home_q").get_to(a.home.q);
}

Pose fk(const ArmModel& arm, const JointConfig& q) {
  Pose p = arm.base_pose_world;
  for (int i = 0; i < 6; ++i) {
    p = compose(p, arm.joints[i].offset);
    p = compose(p, Pose(quat_from_axis_angle(arm.joints[i].axis, q.q[i]), Vec3{}));
  }
  return p;
}

double reach_radius(const ArmModel& arm) {
  double r = 0;
  for (const auto& j : arm.joints) r += norm(j.offset.t);
  return r;
}

const char* ik_status_name(IkStatus s) {
  switch (s) {
    case IkStatus::success: return "success";
    case IkStatus::max_iters: return "max_iters";
    case IkStatus::joint_limit: return "joint_limit";
    case IkStatus::singular: return "singular";
    case IkStatus::step_limit: return "step_limit";
  }
  return "?";
}

IkResult ik_dls(const ArmModel& arm, const Pose& target, const JointConfig& q0,
                const IkConfig& cfg) {
  if (!(cfg.tol_pos > 0) || !(cfg.tol_rot > 0))
    throw std::invalid_argument("ik_dls: tolerances must be > 0");

  IkResult res;
  res.q = clamp_limits(arm, q0);
  TaskError e = task_error(target, fk(arm, res.q));
  double lambda = cfg.damping0;

  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    if (e.pos_norm() <= cfg.tol_pos && e.rot_norm() <= cfg.tol_rot) {
      res.status = IkStatus::success;
      res.iters = iter;
      res.err_pos = e.pos_norm();
      res.err_rot = e.rot_norm();
      return res;
    }
    double jac[6][6];
    fd_jacobian(arm, res.q, jac);

    bool improved = false;
    bool hit_limit = false;
    double trial_lambda = lambda;
    for (int trial = 0; trial < 10 && !improved; ++trial) {
      double dq[6];
      if (!dls_step(jac, e, trial_lambda, dq)) {
        trial_lambda *= 10.0;
        continue;
      }
      double dq_max = 0;
      for (double v : dq) dq_max = std::max(dq_max, std::abs(v));
      if (dq_max > kIterStepCap)
        for (double& v : dq) v *= kIterStepCap / dq_max;
      JointConfig q_raw = res.q;
      for (int k = 0; k < 6; ++k) q_raw.q[k] += dq[k];
      const JointConfig q_new = clamp_limits(arm, q_raw);
      for (int k = 0; k < 6; ++k)
        if (q_new.q[k] != q_raw.q[k]) hit_limit = true;
      const TaskError e_new = task_error(target, fk(arm, q_new));
      if (e_new.combined() < e.combined()) {
        res.q = q_new;
        e = e_new;
        lambda = std::max(trial_lambda * 0.5, 1e-7);
        improved = true;
      } else {
        trial_lambda *= 10.0;
        if (trial_lambda > 1e8) break;
      }
    }
    if (!improved) {
      res.status = hit_limit ? IkStatus::joint_limit : IkStatus::singular;
      res.iters = iter;
      res.err_pos = e.pos_norm();
      res.err_rot = e.rot_norm();
      return res;
    }
  }
  if (e.pos_norm() <= cfg.tol_pos && e.rot_norm() <= cfg.tol_rot) {
    res.status = IkStatus::success;
  } else {
    res.status = IkStatus::max_iters;
  }
  res.iters = cfg.max_iters;
  res.err_pos = e.pos_norm();
  res.err_rot = e.rot_norm();
  return res;
}

namespace {

double joint_step(const JointConfig& a, const JointConfig& b) {
  double s = 0;
  for (int k = 0; k < 6; ++k) s = std::max(s, std::abs(a.q[k] - b.q[k]));
  return s;
}

}  // namespace

FollowResult follow_trajectory(const ArmModel& arm, const std::vector<Pose>& ee_targets,
                               const JointConfig& q_start, const IkConfig& cfg,
                               double max_joint_step) {
  FollowResult out;
  JointConfig q = q_start;
  for (size_t i = 0; i < ee_targets.size(); ++i) {
    IkResult r = ik_dls(arm, ee_targets[i], q, cfg);
    if (r.ok() && i > 0 && joint_step(r.q, q) > max_joint_step) {
      // fast joint swing (singular pass): subdivide the Cartesian segment and
      // track through it; a genuine configuration flip still stalls and fails
      const Pose from = fk(arm, q);
      const int parts =
          std::min(16, static_cast<int>(std::ceil(joint_step(r.q, q) / max_joint_step)) + 1);
      JointConfig qs = q;
      bool sub_ok = true;
      for (int p = 1; p <= parts && sub_ok; ++p) {
        const Pose mid = interpolate(from, ee_targets[i], static_cast<double>(p) / parts);
        const IkResult rs = ik_dls(arm, mid, qs, cfg);
        if (!rs.ok() || joint_step(rs.q, qs) > max_joint_step) sub_ok = false;
        else qs = rs.q;
      }
      if (!sub_ok) {
        out.ok = false;
        out.fail_index = i;
        out.fail_reason = IkStatus::step_limit;
        return out;
      }
      r.q = qs;
    } else if (!r.ok()) {
      out.ok = false;
      out.fail_index = i;
      out.fail_reason = r.status;
      return out;
    }
    q = r.q;
    out.configs.push_back(q);
  }
  out.ok = true;
  return out;
}

const std::array<JointConfig, 8>& spread_seeds() {
  static const std::array<JointConfig, 8> seeds = {{
      {{0.0, 0.6, 1.2, 0.0, -0.8, 0.0}},
      {{1.4, 0.6, 1.2, 0.0, -0.8, 0.0}},
      {{-1.4, 0.6, 1.2, 0.0, -0.8, 0.0}},
      {{2.8, 0.6, 1.2, 0.0, -0.8, 0.0}},
      {{0.0, 1.1, 1.8, 0.0, -0.9, 0.0}},
      {{1.4, 1.1, 1.8, 0.0, -0.9, 0.0}},
      {{-1.4, 1.1, 1.8, 0.0, -0.9, 0.0}},
      {{0.0, 0.25, 0.6, 0.0, -0.4, 0.0}},
  }};
  return seeds;
}

IkResult ik_dls_restarts(const ArmModel& arm, const Pose& target, const JointConfig& q0,
                         const IkConfig& cfg, int random_restarts) {
  IkResult first = ik_dls(arm, target, q0, cfg);
  if (first.ok()) return first;
  for (const auto& seed : spread_seeds()) {
    const IkResult r = ik_dls(arm, target, seed, cfg);
    if (r.ok()) return r;
  }
  // deterministic random restarts as the global fallback
  Rng rng(0x1c5eedULL ^ arm.joints.size());
  for (int rep = 0; rep < random_restarts; ++rep) {
    JointConfig seed;
    for (int i = 0; i < 6; ++i) seed.q[i] = rng.uniform(arm.joints[i].lo, arm.joints[i].hi);
    const IkResult r = ik_dls(arm, target, seed, cfg);
    if (r.ok()) return r;
  }
  return first;
}

namespace {
double limit_margin(const ArmModel& arm, const JointConfig& q) {
  double m = 1.0;
  for (int i = 0; i < 6; ++i) {
    const double range = arm.joints[i].hi - arm.joints[i].lo;
    const double d = std::min(q.q[i] - arm.joints[i].lo, arm.joints[i].hi - q.q[i]);
    m = std::min(m, d / range);
  }
  return m;
}
}  // namespace

IkResult ik_dls_best(const ArmModel& arm, const Pose& target, const JointConfig& q0,
                     const IkConfig& cfg, int random_restarts) {
  IkResult best;
  bool have = false;
  double best_margin = -1;
  IkResult first_fail;
  bool have_fail = false;
  const auto consider = [&](const JointConfig& seed) {
    const IkResult r = ik_dls(arm, target, seed, cfg);
    if (r.ok()) {
      const double m = limit_margin(arm, r.q);
      if (m > best_margin) {
        best_margin = m;
        best = r;
        have = true;
      }
    } else if (!have_fail) {
      first_fail = r;
      have_fail = true;
    }
  };
  consider(q0);
  for (const auto& seed : spread_seeds()) consider(seed);
  Rng rng(0x1c5eedULL ^ arm.joints.size());
  for (int rep = 0; rep < random_restarts && best_margin < 0.15; ++rep) {
    JointConfig seed;
    for (int i = 0; i < 6; ++i) seed.q[i] = rng.uniform(arm.joints[i].lo, arm.joints[i].hi);
    consider(seed);
  }
  if (have) return best;
  return have_fail ? first_fail : ik_dls(arm, target, q0, cfg);
}

bool reachable(const ArmModel& arm, const Pose& pose) {
  if (norm(pose.t - arm.base_pose_world.t) > reach_radius(arm)) return false;
  IkConfig loose;
  loose.tol_pos = 5e-3;
  loose.tol_rot = 5e-2;
  loose.max_iters = 60;
  for (const auto& seed : spread_seeds())
    if (ik_dls(arm, pose, seed, loose).ok()) return true;
  return false;
}

namespace {

ArmModel make_six_r(const std::string& name, const Pose& base, const double lens[6],
                    const double lims[6]) {
  ArmModel arm;
  arm.name = name;
  arm.base_pose_world = base;
  const Vec3 axes[6] = {{0, 0, 1}, {0, 1, 0}, {0, 1, 0}, {0, 0, 1}, {0, 1, 0}, {0, 0, 1}};
  for (int i = 0; i < 6; ++i) {
    arm.joints[i].axis = axes[i];
    arm.joints[i].offset = Pose(Quat{}, {0, 0, lens[i]});
    arm.joints[i].lo = -lims[i];
    arm.joints[i].hi = lims[i];
  }
  arm.home = JointConfig{{0.0, 0.6, 1.2, 0.0, -0.8, 0.0}};
  return arm;
}

}  // namespace

ArmModel make_arm_a(const Pose& base_pose_world) {
  // reach 0.90 m
  const double lens[6] = {0.10, 0.05, 0.38, 0.27, 0.05, 0.05};
  const double lims[6] = {2.96, 2.0, 2.6, 2.96, 2.6, 2.96};
  return make_six_r("arm-A", base_pose_world, lens, lims);
}

ArmModel make_arm_b(const Pose& base_pose_world) {
  // reach 0.85 m, slightly tighter shoulder/elbow limits
  const double lens[6] = {0.09, 0.05, 0.36, 0.25, 0.05, 0.05};
  const double lims[6] = {2.96, 1.9, 2.4, 2.96, 2.5, 2.96};
  return make_six_r("arm-B", base_pose_world, lens, lims);
}

ArmModel make_arm(const std::string& name, const Pose& base_pose_world) {
  if (name == "arm-A") return make_arm_a(base_pose_world);
  if (name == "arm-B") return make_arm_b(base_pose_world);
  throw std::invalid_argument("unknown arm model: " + name);
}

void save_arm(const ArmModel& arm, const std::filesystem::path& p) {
  std::ofstream f(p);
  if (!f) throw std::runtime_error("cannot open for write: " + p.string());
  const nlohmann::json j = arm;
  f << j.dump(2) << "\n";
}

ArmModel load_arm(const std::filesystem::path& p) {
  std::ifstream f(p);
  if (!f) throw std::runtime_error("cannot open: " + p.string());
  nlohmann::json j;
  f >> j;
  ArmModel arm = j.get<ArmModel>();
  arm.validate();
  return arm;
}

}  // namespace ag
