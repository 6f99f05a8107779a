#include "activeglasses/simworld.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

namespace ag {

namespace {
constexpr double kRayEps = 1e-9;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct Ray {
  Vec3 origin;
  Vec3 dir;  // unnormalized; for camera rays dir has z=1 in the camera frame
};

// smallest t > eps where the ray enters the primitive (camera assumed outside)
double hit_sphere(const Ray& r, double radius) {
  const double a = dot(r.dir, r.dir);
  const double b = 2.0 * dot(r.origin, r.dir);
  const double c = dot(r.origin, r.origin) - radius * radius;
  if (c < 0.0) return kNaN;  // origin inside
  const double disc = b * b - 4.0 * a * c;
  if (disc < 0.0) return kNaN;
  const double t = (-b - std::sqrt(disc)) / (2.0 * a);
  return t > kRayEps ? t : kNaN;
}

double hit_box(const Ray& r, const Vec3& half) {
  double tnear = -std::numeric_limits<double>::infinity();
  double tfar = std::numeric_limits<double>::infinity();
  const double o[3] = {r.origin.x, r.origin.y, r.origin.z};
  const double d[3] = {r.dir.x, r.dir.y, r.dir.z};
  const double e[3] = {half.x, half.y, half.z};
  for (int i = 0; i < 3; ++i) {
    if (std::abs(d[i]) < 1e-15) {
      if (o[i] < -e[i] || o[i] > e[i]) return kNaN;
      continue;
    }
    double t1 = (-e[i] - o[i]) / d[i];
    double t2 = (e[i] - o[i]) / d[i];
    if (t1 > t2) std::swap(t1, t2);
    tnear = std::max(tnear, t1);
    tfar = std::min(tfar, t2);
    if (tnear > tfar) return kNaN;
  }
  return tnear > kRayEps ? tnear : kNaN;
}

double hit_cylinder(const Ray& r, double radius, double half_h) {
  double best = kNaN;
  const auto consider = [&](double t) {
    if (t > kRayEps && (!(best == best) || t < best)) best = t;
  };
  // side surface
  const double a = r.dir.x * r.dir.x + r.dir.y * r.dir.y;
  if (a > 1e-15) {
    const double b = 2.0 * (r.origin.x * r.dir.x + r.origin.y * r.dir.y);
    const double c = r.origin.x * r.origin.x + r.origin.y * r.origin.y - radius * radius;
    const double disc = b * b - 4.0 * a * c;
    if (disc >= 0.0 && c >= 0.0) {
      const double t = (-b - std::sqrt(disc)) / (2.0 * a);
      const double z = r.origin.z + t * r.dir.z;
      if (std::abs(z) <= half_h) consider(t);
    }
  }
  // caps
  if (std::abs(r.dir.z) > 1e-15) {
    for (const double zc : {half_h, -half_h}) {
      const double t = (zc - r.origin.z) / r.dir.z;
      const double x = r.origin.x + t * r.dir.x;
      const double y = r.origin.y + t * r.dir.y;
      if (x * x + y * y <= radius * radius) consider(t);
    }
  }
  return best;
}

double hit_primitive(const Primitive& prim, const Pose& inv_pose, const Ray& scene_ray) {
  Ray local;
  local.origin = apply(inv_pose, scene_ray.origin);
  local.dir = quat_rotate(inv_pose.q, scene_ray.dir);
  switch (prim.kind) {
    case PrimKind::sphere: return hit_sphere(local, prim.dims.x);
    case PrimKind::box: return hit_box(local, prim.dims);
    case PrimKind::cylinder: return hit_cylinder(local, prim.dims.x, prim.dims.z);
  }
  return kNaN;
}

struct FlatScene {
  std::vector<Primitive> prims;
  std::vector<Pose> inv_poses;
  std::vector<std::string> names;
};

FlatScene flatten(const SceneSpec& scene, const std::vector<Primitive>& extras) {
  FlatScene fs;
  for (const auto& p : scene.objects) fs.prims.push_back(p);
  for (const auto& p : scene.occluders) fs.prims.push_back(p);
  for (int j = 0; j < 3; ++j) {
    Primitive s;
    s.id = kCalibSphereIds[j];
    s.kind = PrimKind::sphere;
    s.pose = Pose(Quat{}, scene.calib_spheres[j].center);
    s.dims = {scene.calib_spheres[j].radius, 0, 0};
    fs.prims.push_back(s);
  }
  for (const auto& p : extras) fs.prims.push_back(p);
  for (const auto& p : fs.prims) {
    fs.inv_poses.push_back(invert(p.pose));
    fs.names.push_back(p.id);
  }
  return fs;
}

// nearest hit along the camera ray through fractional pixel (u,v); the ray
// direction has z=1 in the camera frame so t equals the camera-z depth
std::pair<double, int32_t> trace(const FlatScene& fs, const Pose& cam, const Intrinsics& intr,
                                 double u, double v) {
  Ray ray;
  ray.origin = cam.t;
  ray.dir = quat_rotate(cam.q, Vec3{(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0});
  double best = std::numeric_limits<double>::infinity();
  int32_t id = -1;
  for (size_t i = 0; i < fs.prims.size(); ++i) {
    const double t = hit_primitive(fs.prims[i], fs.inv_poses[i], ray);
    if (t == t && t < best) {
      best = t;
      id = static_cast<int32_t>(i);
    }
  }
  if (id < 0) return {kNaN, -1};
  return {best, id};
}

}  // namespace

const std::array<const char*, 3> kCalibSphereIds = {"calib_b0", "calib_b1", "calib_b2"};

void Primitive::validate() const {
  switch (kind) {
    case PrimKind::sphere:
      if (!(dims.x > 0)) throw std::invalid_argument("sphere radius must be > 0: " + id);
      break;
    case PrimKind::box:
      if (!(dims.x > 0 && dims.y > 0 && dims.z > 0))
        throw std::invalid_argument("box half-extents must be > 0: " + id);
      break;
    case PrimKind::cylinder:
      if (!(dims.x > 0 && dims.z > 0))
        throw std::invalid_argument("cylinder radius/half-height must be > 0: " + id);
      break;
  }
}

void SceneSpec::validate() const {
  std::set<std::string> ids;
  for (const auto* list : {&objects, &occluders}) {
    for (const auto& p : *list) {
      p.validate();
      if (!ids.insert(p.id).second) throw std::invalid_argument("duplicate primitive id: " + p.id);
    }
  }
  for (const auto& s : calib_spheres)
    if (!(s.radius > 0)) throw std::invalid_argument("calibration sphere radius must be > 0");
  if (!target_object_id.empty() && !find(target_object_id))
    throw std::invalid_argument("target object not in scene: " + target_object_id);
}

const Primitive* SceneSpec::find(const std::string& id) const {
  for (const auto& p : objects)
    if (p.id == id) return &p;
  for (const auto& p : occluders)
    if (p.id == id) return &p;
  return nullptr;
}

Primitive* SceneSpec::find(const std::string& id) {
  return const_cast<Primitive*>(static_cast<const SceneSpec*>(this)->find(id));
}

namespace {
const char* kind_name(PrimKind k) {
  switch (k) {
    case PrimKind::sphere: return "sphere";
    case PrimKind::box: return "box";
    case PrimKind::cylinder: return "cylinder";
  }
  return "?";
}
PrimKind kind_from_name(const std::string& s) {
  if (s == "sphere") return PrimKind::sphere;
  if (s == "box") return PrimKind::box;
  if (s == "cylinder") return PrimKind::cylinder;
  throw std::invalid_argument("unknown primitive kind: " + s);
}
}  // namespace

void to_json(nlohmann::json& j, const SceneSpec& s) {
  nlohmann::json spheres = nlohmann::json::array();
  for (const auto& cs : s.calib_spheres)
    spheres.push_back({{"center", cs.center}, {"radius", cs.radius}});
  const auto prim_list = [](const std::vector<Primitive>& ps) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : ps)
      arr.push_back({{"id", p.id}, {"kind", kind_name(p.kind)}, {"pose", p.pose}, {"dims", p.dims}});
    return arr;
  };
  j = nlohmann::json{{"calib_spheres", spheres},
                     {"objects", prim_list(s.objects)},
                     {"occluders", prim_list(s.occluders)},
                     {"target_object_id", s.target_object_id},
                     {"target_pose", s.target_pose},
                     {"task_kind", s.task_kind},
                     {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, SceneSpec& s) {
  const auto& spheres = j.at("calib_spheres");
  for (int i = 0; i < 3; ++i) {
    spheres.at(i).at("center").get_to(s.calib_spheres[i].center);
    s.calib_spheres[i].radius = spheres.at(i).at("radius").get<double>();
  }
  const auto read_prims = [](const nlohmann::json& arr, std::vector<Primitive>& out) {
    out.clear();
    for (const auto& e : arr) {
      Primitive p;
      p.id = e.at("id").get<std::string>();
      p.kind = kind_from_name(e.at("kind").get<std::string>());
      e.at("pose").get_to(p.pose);
      e.at("dims").get_to(p.dims);
      out.push_back(p);
    }
  };
  read_prims(j.at("objects"), s.objects);
  read_prims(j.at("occluders"), s.occluders);
  s.target_object_id = j.at("target_object_id").get<std::string>();
  j.at("target_pose").get_to(s.target_pose);
  s.task_kind = j.at("task_kind").get<std::string>();
  s.seed = j.at("seed").get<uint64_t>();
}

Mask RenderResult::mask_of(const std::string& id) const {
  int32_t want = -1;
  for (size_t i = 0; i < id_names.size(); ++i)
    if (id_names[i] == id) want = static_cast<int32_t>(i);
  if (want < 0) throw std::invalid_argument("mask_of: unknown id: " + id);
  Mask m = Mask::empty(id_buffer.width, id_buffer.height);
  for (size_t i = 0; i < id_buffer.ids.size(); ++i) m.data[i] = id_buffer.ids[i] == want ? 255 : 0;
  return m;
}

RenderResult render_scene(const SceneSpec& scene, const Pose& cam_pose_scene,
                          const Intrinsics& intr, const std::vector<Primitive>& extras) {
  intr.validate();
  const FlatScene fs = flatten(scene, extras);
  RenderResult rr;
  rr.depth = DepthFrame::invalid(intr.width, intr.height);
  rr.id_buffer.width = intr.width;
  rr.id_buffer.height = intr.height;
  rr.id_buffer.ids.assign(intr.pixel_count(), -1);
  rr.id_names = fs.names;
  for (int v = 0; v < intr.height; ++v) {
    for (int u = 0; u < intr.width; ++u) {
      const auto [t, id] = trace(fs, cam_pose_scene, intr, u, v);
      if (id >= 0) {
        rr.depth.at(u, v) = static_cast<float>(t);
        rr.id_buffer.ids[static_cast<size_t>(v) * intr.width + u] = id;
      }
    }
  }
  return rr;
}

DepthFrame render_depth(const SceneSpec& scene, const Pose& cam_pose_scene,
                        const Intrinsics& intr) {
  return render_scene(scene, cam_pose_scene, intr).depth;
}

Mask render_mask(const SceneSpec& scene, const Pose& cam_pose_scene, const Intrinsics& intr,
                 const std::string& target_id) {
  return render_scene(scene, cam_pose_scene, intr).mask_of(target_id);
}

double render_depth_at(const SceneSpec& scene, const Pose& cam_pose_scene,
                       const Intrinsics& intr, double u, double v,
                       const std::vector<Primitive>& extras) {
  const FlatScene fs = flatten(scene, extras);
  return trace(fs, cam_pose_scene, intr, u, v).first;
}

Pose oracle_object_pose(const SceneSpec& scene, const Pose& cam_pose_scene,
                        const std::string& target_id, const PoseNoise& noise, Rng* rng) {
  const Primitive* obj = scene.find(target_id);
  if (!obj) throw std::invalid_argument("oracle_object_pose: unknown id: " + target_id);
  Pose rel = relative(cam_pose_scene, obj->pose);
  if (rng && (noise.sigma_trans > 0 || noise.sigma_rot > 0)) {
    const Vec3 axis{rng->normal(), rng->normal(), rng->normal()};
    const double angle = rng->normal(0.0, noise.sigma_rot);
    const Vec3 dt{rng->normal(0.0, noise.sigma_trans), rng->normal(0.0, noise.sigma_trans),
                  rng->normal(0.0, noise.sigma_trans)};
    Quat dq{1, 0, 0, 0};
    if (norm(axis) > 1e-12 && angle != 0.0) dq = quat_from_axis_angle(axis, angle);
    rel = compose(Pose(dq, dt), rel);
  }
  return rel;
}

LabeledCloud sample_scene_surface(const SceneSpec& scene, double spacing) {
  if (!(spacing > 0)) throw std::invalid_argument("sample_scene_surface: spacing must be > 0");
  static const std::array<std::array<uint8_t, 3>, 6> palette = {{{230, 80, 80},
                                                                 {80, 180, 90},
                                                                 {80, 110, 230},
                                                                 {220, 180, 60},
                                                                 {170, 90, 200},
                                                                 {90, 200, 200}}};
  const FlatScene fs = flatten(scene, {});
  LabeledCloud cloud;
  cloud.tag = FrameTag::world;
  for (size_t pi = 0; pi < fs.prims.size(); ++pi) {
    const Primitive& p = fs.prims[pi];
    const auto color = palette[pi % palette.size()];
    const auto emit = [&](const Vec3& local) {
      cloud.push_point(apply(p.pose, local));
      cloud.colors.push_back(color);
    };
    if (p.kind == PrimKind::sphere) {
      const double r = p.dims.x;
      const int n = std::max(4, static_cast<int>(std::ceil(M_PI * r / spacing)));
      for (int i = 0; i <= n; ++i) {
        const double th = M_PI * i / n;
        const int m = std::max(3, static_cast<int>(std::ceil(2 * M_PI * r * std::sin(th) / spacing)));
        for (int k = 0; k < m; ++k) {
          const double ph = 2 * M_PI * k / m;
          emit({r * std::sin(th) * std::cos(ph), r * std::sin(th) * std::sin(ph), r * std::cos(th)});
        }
      }
    } else if (p.kind == PrimKind::box) {
      const Vec3 e = p.dims;
      const auto face = [&](int axis, double sign) {
        const double ea = axis == 0 ? e.x : axis == 1 ? e.y : e.z;
        const double eb = axis == 0 ? e.y : axis == 1 ? e.z : e.x;
        const double ec = axis == 0 ? e.z : axis == 1 ? e.x : e.y;
        const int nb = std::max(1, static_cast<int>(std::ceil(2 * eb / spacing)));
        const int nc = std::max(1, static_cast<int>(std::ceil(2 * ec / spacing)));
        for (int i = 0; i <= nb; ++i)
          for (int k = 0; k <= nc; ++k) {
            const double b = -eb + 2 * eb * i / nb;
            const double c = -ec + 2 * ec * k / nc;
            Vec3 q;
            if (axis == 0) q = {sign * ea, b, c};
            else if (axis == 1) q = {c, sign * ea, b};
            else q = {b, c, sign * ea};
            emit(q);
          }
      };
      for (int axis = 0; axis < 3; ++axis) {
        face(axis, 1.0);
        face(axis, -1.0);
      }
    } else {
      const double r = p.dims.x, h = p.dims.z;
      const int m = std::max(6, static_cast<int>(std::ceil(2 * M_PI * r / spacing)));
      const int nz = std::max(1, static_cast<int>(std::ceil(2 * h / spacing)));
      for (int i = 0; i <= nz; ++i)
        for (int k = 0; k < m; ++k) {
          const double ph = 2 * M_PI * k / m;
          emit({r * std::cos(ph), r * std::sin(ph), -h + 2 * h * i / nz});
        }
      const int nr = std::max(1, static_cast<int>(std::ceil(r / spacing)));
      for (int i = 1; i <= nr; ++i)
        for (int k = 0; k < m; ++k) {
          const double ph = 2 * M_PI * k / m;
          const double rr = r * i / nr;
          emit({rr * std::cos(ph), rr * std::sin(ph), h});
          emit({rr * std::cos(ph), rr * std::sin(ph), -h});
        }
    }
  }
  return cloud;
}

// ---- demo generation --------------------------------------------------------

void DemoScript::validate() const {
  for (const auto& ph : phases)
    if (!(ph.duration_s > 0)) throw std::invalid_argument("demo phase duration must be > 0");
}

double DemoScript::total_duration() const {
  double t = 0;
  for (const auto& ph : phases) t += ph.duration_s;
  return t > 0 ? t : 2.0;  // empty script: static 2 s episode
}

void to_json(nlohmann::json& j, const DemoScript& s) {
  nlohmann::json phases = nlohmann::json::array();
  for (const auto& ph : s.phases)
    phases.push_back({{"name", ph.name}, {"object_target", ph.object_target},
                      {"duration_s", ph.duration_s}});
  j = nlohmann::json{{"phases", phases},
                     {"cam_start", s.cam_start},
                     {"cam_end", s.cam_end},
                     {"peer_amplitude", s.peer_amplitude},
                     {"hand_offset", s.hand_offset},
                     {"hand_radius", s.hand_radius}};
}

void from_json(const nlohmann::json& j, DemoScript& s) {
  s.phases.clear();
  for (const auto& e : j.at("phases")) {
    DemoPhase ph;
    ph.name = e.at("name").get<std::string>();
    e.at("object_target").get_to(ph.object_target);
    ph.duration_s = e.at("duration_s").get<double>();
    s.phases.push_back(ph);
  }
  j.at("cam_start").get_to(s.cam_start);
  j.at("cam_end").get_to(s.cam_end);
  s.peer_amplitude = j.at("peer_amplitude").get<double>();
  j.at("hand_offset").get_to(s.hand_offset);
  s.hand_radius = j.at("hand_radius").get<double>();
}

namespace {

double smoothstep(double s) { return s * s * (3.0 - 2.0 * s); }

// object pose along the script at time t (scene frame)
Pose script_object_pose(const Pose& start, const DemoScript& script, double t) {
  Pose prev = start;
  double t0 = 0;
  for (const auto& ph : script.phases) {
    if (t <= t0 + ph.duration_s) {
      const double s = std::clamp((t - t0) / ph.duration_s, 0.0, 1.0);
      return interpolate(prev, ph.object_target, smoothstep(s));
    }
    t0 += ph.duration_s;
    prev = ph.object_target;
  }
  return prev;
}

Pose look_at_camera(const Vec3& pos, const Vec3& target) {
  Vec3 fwd = target - pos;
  if (norm(fwd) < 1e-9) fwd = {1, 0, 0};
  fwd = normalized(fwd);
  Vec3 up{0, 0, 1};
  if (std::abs(dot(fwd, up)) > 0.999) up = {0, 1, 0};
  const Vec3 xc = normalized(cross(up, fwd));
  const Vec3 yc = cross(fwd, xc);
  const double r[9] = {xc.x, yc.x, fwd.x, xc.y, yc.y, fwd.y, xc.z, yc.z, fwd.z};
  return Pose(quat_from_matrix(r), pos);
}

// camera pose (scene frame) along the lean-in / peer-around path; u is task
// progress (object distance covered toward the goal), so a static object
// keeps the starting vantage
Pose script_camera_pose(const SceneSpec& scene, const DemoScript& script, const Pose& obj_pose,
                        double u) {
  const double e = smoothstep(std::clamp(u, 0.0, 1.0));
  const Vec3 base = script.cam_start + e * (script.cam_end - script.cam_start);
  // lateral arc perpendicular to the lean direction
  Vec3 lean = script.cam_end - script.cam_start;
  lean.z = 0;
  Vec3 side{0, 1, 0};
  if (norm(lean) > 1e-9) side = normalized(cross(Vec3{0, 0, 1}, lean));
  const Vec3 pos = base + (script.peer_amplitude * std::sin(M_PI * e)) * side;
  // gaze drifts from near the object toward the goal, staying between the two
  // so both remain in view even when the object does not move
  const Vec3 look = obj_pose.t + (0.35 + 0.45 * e) * (scene.target_pose.t - obj_pose.t);
  return look_at_camera(pos, look);
}

bool point_in_view(const Pose& cam, const Intrinsics& intr, const Vec3& p_scene) {
  const Vec3 pc = apply(invert(cam), p_scene);
  if (pc.z < 0.05) return false;
  const double u = intr.fx * pc.x / pc.z + intr.cx;
  const double v = intr.fy * pc.y / pc.z + intr.cy;
  return u >= 0 && u < intr.width && v >= 0 && v < intr.height;
}

}  // namespace

Pose demo_object_pose(const SceneSpec& scene, const DemoScript& script, double t) {
  return script_object_pose(scene.find(scene.target_object_id)->pose, script, t);
}

Pose demo_camera_pose(const SceneSpec& scene, const DemoScript& script, const Pose& obj_pose,
                      double progress) {
  return script_camera_pose(scene, script, obj_pose, progress);
}

double demo_progress(const SceneSpec& scene, const Pose& obj_start, const Pose& obj_now) {
  const double dist0 = std::max(norm(scene.target_pose.t - obj_start.t), 1e-6);
  return std::clamp(1.0 - norm(scene.target_pose.t - obj_now.t) / dist0, 0.0, 1.0);
}

RawStreams generate_demo(const SceneSpec& scene, const DemoScript& script,
                         const StreamRates& rates, const Intrinsics& intr, uint64_t seed) {
  scene.validate();
  script.validate();
  intr.validate();
  if (scene.target_object_id.empty())
    throw std::invalid_argument("generate_demo: scene has no target object");
  const Box3 scene_bounds{{-0.8, -0.8, -0.2}, {1.5, 1.5, 1.2}};
  for (const auto& ph : script.phases)
    if (!scene_bounds.contains(ph.object_target.t))
      throw std::invalid_argument("generate_demo: waypoint outside scene bounds: " + ph.name);

  Rng rng(seed);
  const Pose obj_start = scene.find(scene.target_object_id)->pose;
  const double duration = script.total_duration();
  const double dist0 = std::max(norm(scene.target_pose.t - obj_start.t), 1e-6);
  const auto progress = [&](const Pose& obj) {
    return std::clamp(1.0 - norm(scene.target_pose.t - obj.t) / dist0, 0.0, 1.0);
  };

  RawStreams out;
  // fixed camera mount and an arbitrary tracking origin; both cancel in the
  // calibration propagation and are exercised by making them non-trivial
  out.glass_to_cam = Pose(quat_from_axis_angle(Vec3{0, 1, 0}, 0.035), Vec3{0.02, -0.03, 0.01});
  {
    const Vec3 axis{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const double angle = rng.uniform(-3.0, 3.0);
    const Vec3 t{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    out.tracking_offset =
        norm(axis) > 1e-6 ? Pose(quat_from_axis_angle(axis, angle), t) : Pose(Quat{}, t);
  }

  // head pose stream
  const int n_pose = static_cast<int>(std::floor(duration * rates.pose_hz)) + 1;
  for (int j = 0; j < n_pose; ++j) {
    double t = j / rates.pose_hz;
    if (rates.pose_time_jitter > 0 && j > 0 && j + 1 < n_pose)
      t += rng.uniform(-rates.pose_time_jitter, rates.pose_time_jitter);
    const Pose obj = script_object_pose(obj_start, script, t);
    const Pose cam = script_camera_pose(scene, script, obj, progress(obj));
    // glasses pose in the tracking frame: track_from_scene * cam_pose * glass_to_cam
    const Pose head = compose(compose(out.tracking_offset, cam), out.glass_to_cam);
    out.head_poses.push_back({t, head});
  }

  // frame stream
  SceneSpec working = scene;
  Primitive* obj_prim = working.find(scene.target_object_id);
  int visible = 0;
  const int n_frame = static_cast<int>(std::floor(duration * rates.frame_hz)) + 1;
  for (int i = 0; i < n_frame; ++i) {
    const double t = i / rates.frame_hz;
    const Pose obj = script_object_pose(obj_start, script, t);
    const Pose cam = script_camera_pose(scene, script, obj, progress(obj));
    obj_prim->pose = obj;

    Primitive hand;
    hand.id = "hand";
    hand.kind = PrimKind::sphere;
    hand.pose = compose(obj, Pose(Quat{}, script.hand_offset));
    hand.dims = {script.hand_radius, 0, 0};

    const RenderResult rr = render_scene(working, cam, intr, {hand});
    RawFrame frame;
    frame.timestamp = t;
    frame.depth = rr.depth;
    frame.hand_mask = rr.mask_of("hand");
    frame.object_mask = rr.mask_of(scene.target_object_id);
    frame.object_pose_cam = oracle_object_pose(working, cam, scene.target_object_id);
    if (i == 0) {
      out.depth_frame0 = rr.depth;
      for (int j = 0; j < 3; ++j) {
        out.sphere_masks_frame0[j] = rr.mask_of(kCalibSphereIds[j]);
        if (out.sphere_masks_frame0[j].count() < 20)
          throw std::runtime_error(
              std::string("generate_demo: calibration sphere not visible in frame 0: ") +
              kCalibSphereIds[j]);
      }
    }
    if (point_in_view(cam, intr, obj.t) && point_in_view(cam, intr, scene.target_pose.t))
      ++visible;
    out.frames.push_back(std::move(frame));
  }

  if (visible < static_cast<int>(0.9 * n_frame))
    throw std::runtime_error("generate_demo: object/target visibility below 90% of frames");
  return out;
}

// ---- randomization ----------------------------------------------------------

void to_json(nlohmann::json& j, const RandomizationGroup& g) {
  j = nlohmann::json{{"ids", g.ids},
                     {"carries_target", g.carries_target},
                     {"trans_lo", g.trans_lo},
                     {"trans_hi", g.trans_hi},
                     {"yaw_lo", g.yaw_lo},
                     {"yaw_hi", g.yaw_hi}};
}

void from_json(const nlohmann::json& j, RandomizationGroup& g) {
  j.at("ids").get_to(g.ids);
  g.carries_target = j.at("carries_target").get<bool>();
  j.at("trans_lo").get_to(g.trans_lo);
  j.at("trans_hi").get_to(g.trans_hi);
  g.yaw_lo = j.at("yaw_lo").get<double>();
  g.yaw_hi = j.at("yaw_hi").get<double>();
}

namespace {

struct Obb {
  Vec3 center;
  Vec3 half;
  double rot[9];  // local->scene, row-major
};

Obb as_obb(const Primitive& p) {
  Obb o;
  o.center = p.pose.t;
  quat_to_matrix(p.pose.q, o.rot);
  switch (p.kind) {
    case PrimKind::box: o.half = p.dims; break;
    case PrimKind::cylinder: o.half = {p.dims.x, p.dims.x, p.dims.z}; break;
    case PrimKind::sphere: o.half = {p.dims.x, p.dims.x, p.dims.x}; break;
  }
  return o;
}

// Gottschalk separating-axis test for oriented boxes
bool obb_overlap(const Obb& a, const Obb& b) {
  double r[3][3], ar[3][3];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      // R = A^T B, columns of rot are world axes of each box
      r[i][j] = a.rot[0 * 3 + i] * b.rot[0 * 3 + j] + a.rot[1 * 3 + i] * b.rot[1 * 3 + j] +
                a.rot[2 * 3 + i] * b.rot[2 * 3 + j];
      ar[i][j] = std::abs(r[i][j]) + 1e-12;
    }
  const Vec3 d = b.center - a.center;
  // t = d expressed in A's frame
  const double t[3] = {d.x * a.rot[0] + d.y * a.rot[3] + d.z * a.rot[6],
                       d.x * a.rot[1] + d.y * a.rot[4] + d.z * a.rot[7],
                       d.x * a.rot[2] + d.y * a.rot[5] + d.z * a.rot[8]};
  const double ae[3] = {a.half.x, a.half.y, a.half.z};
  const double be[3] = {b.half.x, b.half.y, b.half.z};
  for (int i = 0; i < 3; ++i) {
    const double ra = ae[i];
    const double rb = be[0] * ar[i][0] + be[1] * ar[i][1] + be[2] * ar[i][2];
    if (std::abs(t[i]) > ra + rb) return false;
  }
  for (int j = 0; j < 3; ++j) {
    const double ra = ae[0] * ar[0][j] + ae[1] * ar[1][j] + ae[2] * ar[2][j];
    const double rb = be[j];
    if (std::abs(t[0] * r[0][j] + t[1] * r[1][j] + t[2] * r[2][j]) > ra + rb) return false;
  }
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      const int i1 = (i + 1) % 3, i2 = (i + 2) % 3;
      const int j1 = (j + 1) % 3, j2 = (j + 2) % 3;
      const double ra = ae[i1] * ar[i2][j] + ae[i2] * ar[i1][j];
      const double rb = be[j1] * ar[i][j2] + be[j2] * ar[i][j1];
      const double tt = std::abs(t[i2] * r[i1][j] - t[i1] * r[i2][j]);
      if (tt > ra + rb) return false;
    }
  return true;
}

double point_obb_distance(const Vec3& p, const Obb& o) {
  const Vec3 d = p - o.center;
  const double l[3] = {d.x * o.rot[0] + d.y * o.rot[3] + d.z * o.rot[6],
                       d.x * o.rot[1] + d.y * o.rot[4] + d.z * o.rot[7],
                       d.x * o.rot[2] + d.y * o.rot[5] + d.z * o.rot[8]};
  const double e[3] = {o.half.x, o.half.y, o.half.z};
  double dist2 = 0;
  for (int i = 0; i < 3; ++i) {
    const double c = std::clamp(l[i], -e[i], e[i]);
    dist2 += (l[i] - c) * (l[i] - c);
  }
  return std::sqrt(dist2);
}

}  // namespace

bool primitives_overlap(const Primitive& a, const Primitive& b) {
  if (a.kind == PrimKind::sphere && b.kind == PrimKind::sphere)
    return norm(a.pose.t - b.pose.t) < a.dims.x + b.dims.x;
  if (a.kind == PrimKind::sphere) return point_obb_distance(a.pose.t, as_obb(b)) < a.dims.x;
  if (b.kind == PrimKind::sphere) return point_obb_distance(b.pose.t, as_obb(a)) < b.dims.x;
  // boxes exactly; cylinders conservatively by their bounding box
  return obb_overlap(as_obb(a), as_obb(b));
}

SceneSpec randomize_scene(const SceneSpec& base, const std::vector<RandomizationGroup>& groups,
                          uint64_t seed) {
  base.validate();
  Rng rng(seed);
  for (const auto& g : groups)
    for (const auto& id : g.ids)
      if (!base.find(id)) throw std::invalid_argument("randomize_scene: unknown id: " + id);

  for (int attempt = 0; attempt < 100; ++attempt) {
    SceneSpec scene = base;
    std::set<std::string> moved;
    for (const auto& g : groups) {
      const Vec3 dt{rng.uniform(g.trans_lo.x, g.trans_hi.x), rng.uniform(g.trans_lo.y, g.trans_hi.y),
                    rng.uniform(g.trans_lo.z, g.trans_hi.z)};
      const double yaw = rng.uniform(g.yaw_lo, g.yaw_hi);
      const Vec3 anchor =
          g.carries_target ? base.target_pose.t : base.find(g.ids.front())->pose.t;
      const Pose rot(quat_from_axis_angle(Vec3{0, 0, 1}, yaw), Vec3{});
      // displace: rotate about the anchor, then translate
      const Pose G = compose(Pose(Quat{}, anchor + dt), compose(rot, Pose(Quat{}, -anchor)));
      for (const auto& id : g.ids) {
        Primitive* p = scene.find(id);
        p->pose = compose(G, p->pose);
        moved.insert(id);
      }
      if (g.carries_target) scene.target_pose = compose(G, scene.target_pose);
    }

    // reject layouts where a moved primitive overlaps anything outside its group
    bool ok = true;
    const auto all_of = [](const SceneSpec& s) {
      std::vector<const Primitive*> v;
      for (const auto& p : s.objects) v.push_back(&p);
      for (const auto& p : s.occluders) v.push_back(&p);
      return v;
    };
    const auto group_of = [&](const std::string& id) -> int {
      for (size_t gi = 0; gi < groups.size(); ++gi)
        for (const auto& gid : groups[gi].ids)
          if (gid == id) return static_cast<int>(gi);
      return -1;
    };
    const auto prims = all_of(scene);
    const auto base_prims = all_of(base);
    for (size_t i = 0; i < prims.size() && ok; ++i)
      for (size_t k = i + 1; k < prims.size() && ok; ++k) {
        const bool i_moved = moved.count(prims[i]->id) > 0;
        const bool k_moved = moved.count(prims[k]->id) > 0;
        if (!i_moved && !k_moved) continue;
        if (i_moved && k_moved && group_of(prims[i]->id) == group_of(prims[k]->id)) continue;
        if (primitives_overlap(*base_prims[i], *base_prims[k])) continue;  // pre-existing contact
        if (primitives_overlap(*prims[i], *prims[k])) ok = false;
      }
    if (ok) return scene;
  }
  throw std::runtime_error("randomize_scene: no non-overlapping layout after 100 attempts");
}

// ---- stock scenes -------------------------------------------------------------

Intrinsics default_intrinsics() {
  Intrinsics in;
  in.fx = in.fy = 230.0;
  in.cx = 160.0;
  in.cy = 120.0;
  in.width = 320;
  in.height = 240;
  return in;
}

namespace {

void add_calib_spheres(SceneSpec& s) {
  s.calib_spheres[0] = {{0.0, 0.35, 0.02}, 0.02};  // b0 (+y)
  s.calib_spheres[1] = {{0.0, 0.0, 0.02}, 0.02};   // b1 (origin)
  s.calib_spheres[2] = {{0.35, 0.0, 0.02}, 0.02};  // b2 (+x)
}

Primitive box(const std::string& id, const Vec3& center, const Vec3& half) {
  Primitive p;
  p.id = id;
  p.kind = PrimKind::box;
  p.pose = Pose(Quat{}, center);
  p.dims = half;
  return p;
}

Primitive cylinder(const std::string& id, const Vec3& center, double r, double half_h) {
  Primitive p;
  p.id = id;
  p.kind = PrimKind::cylinder;
  p.pose = Pose(Quat{}, center);
  p.dims = {r, 0, half_h};
  return p;
}

}  // namespace

SceneSpec make_slot_scene() {
  SceneSpec s;
  s.task_kind = "slot";
  add_calib_spheres(s);
  s.occluders.push_back(box("table", {0.30, 0.30, -0.01}, {0.65, 0.65, 0.01}));
  s.occluders.push_back(box("wall_left", {0.55, 0.40, 0.11}, {0.06, 0.015, 0.11}));
  s.occluders.push_back(box("wall_right", {0.55, 0.50, 0.11}, {0.06, 0.015, 0.11}));
  s.occluders.push_back(box("wall_back", {0.632, 0.45, 0.11}, {0.012, 0.065, 0.11}));
  s.objects.push_back(box("book", {0.22, 0.12, 0.09}, {0.03, 0.025, 0.09}));
  s.target_object_id = "book";
  s.target_pose = Pose(Quat{}, {0.55, 0.45, 0.09});
  return s;
}

SceneSpec make_pour_scene() {
  SceneSpec s;
  s.task_kind = "pour";
  add_calib_spheres(s);
  s.occluders.push_back(box("table", {0.30, 0.30, -0.01}, {0.65, 0.65, 0.01}));
  s.occluders.push_back(box("screen", {0.45, 0.42, 0.14}, {0.012, 0.22, 0.14}));
  s.occluders.push_back(cylinder("cup", {0.68, 0.42, 0.045}, 0.03, 0.045));
  s.objects.push_back(cylinder("teapot", {0.20, 0.42, 0.06}, 0.035, 0.06));
  s.target_object_id = "teapot";
  s.target_pose = Pose(quat_from_axis_angle(Vec3{0, 1, 0}, 65.0 * M_PI / 180.0), {0.68, 0.42, 0.17});
  return s;
}

SceneSpec make_task_scene(const std::string& task_kind) {
  if (task_kind == "slot") return make_slot_scene();
  if (task_kind == "pour") return make_pour_scene();
  throw std::invalid_argument("unknown task kind: " + task_kind);
}

DemoScript make_demo_script(const SceneSpec& scene) {
  DemoScript sc;
  if (scene.task_kind == "slot") {
    const Pose& goal = scene.target_pose;
    const Quat& gq = goal.q;
    sc.phases = {
        {"approach", Pose(gq, goal.t + Vec3{-0.15, 0.0, 0.07}), 2.5},
        {"align", Pose(gq, goal.t + Vec3{-0.08, 0.0, 0.025}), 1.5},
        {"insert", Pose(gq, goal.t + Vec3{0.0, 0.0, 0.025}), 1.5},
        {"place", goal, 1.0},
    };
    sc.cam_start = {-0.55, 0.00, 0.60};
    sc.cam_end = {-0.30, 0.15, 0.45};
    sc.peer_amplitude = 0.05;
  } else if (scene.task_kind == "pour") {
    const Pose& goal = scene.target_pose;
    const Pose start = scene.find(scene.target_object_id)->pose;
    sc.phases = {
        {"lift", Pose(start.q, {start.t.x, start.t.y, 0.40}), 2.0},
        {"cross", Pose(start.q, {0.45, goal.t.y, 0.40}), 2.0},
        {"align", Pose(start.q, goal.t + Vec3{0.0, 0.0, 0.05}), 2.0},
        {"tilt", goal, 1.5},
        {"hold", goal, 1.5},
    };
    sc.cam_start = {-0.55, 0.00, 0.60};
    sc.cam_end = {-0.10, 0.00, 0.45};
    sc.peer_amplitude = 0.05;
  } else {
    throw std::invalid_argument("unknown task kind: " + scene.task_kind);
  }
  return sc;
}

std::vector<RandomizationGroup> default_randomization(const SceneSpec& scene) {
  std::vector<RandomizationGroup> gs;
  if (scene.task_kind == "slot") {
    RandomizationGroup shelf;
    shelf.ids = {"wall_left", "wall_right", "wall_back"};
    shelf.carries_target = true;
    shelf.trans_lo = {-0.025, -0.025, 0};
    shelf.trans_hi = {0.025, 0.025, 0};
    shelf.yaw_lo = -0.06;
    shelf.yaw_hi = 0.06;
    RandomizationGroup book;
    book.ids = {"book"};
    book.trans_lo = {-0.03, -0.03, 0};
    book.trans_hi = {0.03, 0.03, 0};
    book.yaw_lo = -0.10;
    book.yaw_hi = 0.10;
    gs = {shelf, book};
  } else if (scene.task_kind == "pour") {
    RandomizationGroup cup;
    cup.ids = {"cup"};
    cup.carries_target = true;
    cup.trans_lo = {-0.03, -0.03, 0};
    cup.trans_hi = {0.03, 0.03, 0};
    RandomizationGroup teapot;
    teapot.ids = {"teapot"};
    teapot.trans_lo = {-0.03, -0.03, 0};
    teapot.trans_hi = {0.03, 0.03, 0};
    gs = {cup, teapot};
  }
  return gs;
}

Pose world_from_scene(const SceneSpec& scene) {
  const Vec3 b0 = scene.calib_spheres[0].center;
  const Vec3 b1 = scene.calib_spheres[1].center;
  const Vec3 b2 = scene.calib_spheres[2].center;
  const Vec3 xh = normalized(b2 - b1);
  const Vec3 zh = normalized(cross(xh, normalized(b0 - b1)));
  const Vec3 yh = cross(zh, xh);
  const double r[9] = {xh.x, xh.y, xh.z, yh.x, yh.y, yh.z, zh.x, zh.y, zh.z};
  const Quat q = quat_from_matrix(r);
  return Pose(q, -quat_rotate(q, b1));
}

}  // namespace ag
