#include <doctest.h>

#include <filesystem>

#include "activeglasses/rng.hpp"
#include "activeglasses/traj.hpp"
#include "oracles.hpp"

using namespace ag;

namespace {
constexpr double kTol = 1e-9;

Episode episode_with_poses(const std::vector<std::optional<Pose>>& cam_poses) {
  Episode ep;
  for (size_t i = 0; i < cam_poses.size(); ++i) {
    FrameRecord f;
    f.timestamp = 0.1 * static_cast<double>(i);
    f.object_pose_cam = cam_poses[i];
    ep.frames.push_back(std::move(f));
  }
  return ep;
}

}  // namespace

TEST_CASE("extract_object_traj: identity anchors, static object, gap fill") {
  Rng rng(61);

  SUBCASE("identity cam_to_world keeps the camera trajectory") {
    std::vector<std::optional<Pose>> obs;
    for (int i = 0; i < 8; ++i) obs.push_back(oracle::random_pose(rng));
    const Episode ep = episode_with_poses(obs);
    const std::vector<Pose> anchors(8, Pose::identity());
    const auto world = extract_object_traj(ep, anchors);
    for (int i = 0; i < 8; ++i) CHECK(approx_equal(world[i], *obs[i], kTol, kTol));
  }

  SUBCASE("static object under a moving camera is constant in the world") {
    const Pose obj_world = oracle::random_pose(rng);
    std::vector<std::optional<Pose>> obs;
    std::vector<Pose> anchors;
    for (int i = 0; i < 20; ++i) {
      const Pose cam_to_world = oracle::random_pose(rng);
      anchors.push_back(cam_to_world);
      obs.push_back(compose(invert(cam_to_world), obj_world));
    }
    const auto world = extract_object_traj(episode_with_poses(obs), anchors);
    for (const Pose& p : world) CHECK(approx_equal(p, obj_world, 1e-6, 1e-6));
  }

  SUBCASE("single missing frame filled by interpolation between neighbours") {
    std::vector<std::optional<Pose>> obs;
    obs.push_back(Pose(Quat{}, {0, 0, 0}));
    obs.push_back(std::nullopt);
    obs.push_back(Pose(Quat{}, {0.2, 0, 0}));
    const auto world = extract_object_traj(episode_with_poses(obs),
                                           std::vector<Pose>(3, Pose::identity()));
    CHECK(world[1].t.x == doctest::Approx(0.1).epsilon(1e-12));
  }

  SUBCASE("gap longer than two throws") {
    std::vector<std::optional<Pose>> obs;
    obs.push_back(Pose{});
    obs.push_back(std::nullopt);
    obs.push_back(std::nullopt);
    obs.push_back(std::nullopt);
    obs.push_back(Pose{});
    CHECK_THROWS(extract_object_traj(episode_with_poses(obs),
                                     std::vector<Pose>(5, Pose::identity())));
  }
}

TEST_CASE("relative_head_window: constants, cumulative steps, round trip, padding") {
  SUBCASE("constant trajectory gives identity deltas") {
    const std::vector<Pose> head(10, Pose(quat_from_axis_angle(Vec3{1, 0, 0}, 0.5), {1, 2, 3}));
    const HeadTrajRel rel = relative_head_window(head, 2, 4);
    for (const Pose& d : rel.deltas) CHECK(approx_equal(d, Pose::identity(), kTol, kTol));
  }

  SUBCASE("uniform translation accumulates per step") {
    std::vector<Pose> head;
    for (int i = 0; i < 12; ++i) head.push_back(Pose(Quat{}, {0.01 * i, 0, 0}));
    const HeadTrajRel rel = relative_head_window(head, 3, 5);
    for (int k = 0; k < 5; ++k)
      CHECK(rel.deltas[k].t.x == doctest::Approx(0.01 * (k + 1)).epsilon(1e-9));
  }

  SUBCASE("random walk round-trips through compose") {
    Rng rng(62);
    std::vector<Pose> head;
    for (int i = 0; i < 30; ++i) head.push_back(oracle::random_pose(rng));
    const size_t t = 7;
    const HeadTrajRel rel = relative_head_window(head, t, 8);
    for (int k = 0; k < 8; ++k)
      CHECK(approx_equal(compose(head[t], rel.deltas[k]), head[t + k + 1], kTol, kTol));
  }

  SUBCASE("windows past the end repeat the final pose") {
    std::vector<Pose> head;
    for (int i = 0; i < 5; ++i) head.push_back(Pose(Quat{}, {0.1 * i, 0, 0}));
    const HeadTrajRel rel = relative_head_window(head, 3, 6);
    for (int k = 1; k < 6; ++k) CHECK(rel.deltas[k].t.x == doctest::Approx(0.1).epsilon(1e-9));
  }

  CHECK_THROWS(relative_head_window({}, 0, 4));
}

TEST_CASE("rel_to_abs / abs_to_rel: inverses and equivariance") {
  Rng rng(63);

  SUBCASE("identity deltas give a constant absolute trajectory") {
    const Pose base = oracle::random_pose(rng);
    HeadTrajRel rel;
    rel.deltas.assign(6, Pose::identity());
    for (const Pose& p : rel_to_abs(base, rel)) CHECK(approx_equal(p, base, kTol, kTol));
  }

  SUBCASE("round trip is the identity") {
    for (int rep = 0; rep < 50; ++rep) {
      const Pose base = oracle::random_pose(rng);
      HeadTrajRel rel;
      for (int k = 0; k < 7; ++k) rel.deltas.push_back(oracle::random_pose(rng));
      const HeadTrajRel back = abs_to_rel(base, rel_to_abs(base, rel));
      for (int k = 0; k < 7; ++k) CHECK(approx_equal(back.deltas[k], rel.deltas[k], kTol, kTol));
    }
  }

  SUBCASE("left-multiplying the base transforms the absolute output on the left") {
    const Pose base = oracle::random_pose(rng);
    const Pose g = oracle::random_pose(rng);
    HeadTrajRel rel;
    for (int k = 0; k < 5; ++k) rel.deltas.push_back(oracle::random_pose(rng));
    const auto a = rel_to_abs(compose(g, base), rel);
    const auto b = rel_to_abs(base, rel);
    for (int k = 0; k < 5; ++k) CHECK(approx_equal(a[k], compose(g, b[k]), kTol, kTol));
  }

  SUBCASE("deltas are invariant to re-expressing heads in a shifted tracking frame") {
    Rng r2(64);
    std::vector<Pose> head;
    for (int i = 0; i < 12; ++i) head.push_back(oracle::random_pose(r2));
    const Pose g = oracle::random_pose(r2);
    std::vector<Pose> shifted;
    for (const Pose& h : head) shifted.push_back(compose(g, h));
    const HeadTrajRel a = relative_head_window(head, 2, 6);
    const HeadTrajRel b = relative_head_window(shifted, 2, 6);
    for (int k = 0; k < 6; ++k) CHECK(approx_equal(a.deltas[k], b.deltas[k], kTol, kTol));
  }
}

TEST_CASE("compute_grasp_transform: identity, offset, frame invariance") {
  Rng rng(65);

  const Pose obj = oracle::random_pose(rng);
  CHECK(approx_equal(compute_grasp_transform(obj, obj).obj_to_ee, Pose::identity(), kTol, kTol));

  // ee 10 cm above the object with the same rotation -> (0,0,0.1) in object frame
  const Pose obj2(quat_from_axis_angle(Vec3{0, 0, 1}, 0.0), {0.4, 0.2, 0.1});
  const Pose ee2(obj2.q, obj2.t + Vec3{0, 0, 0.1});
  const GraspTransform g2 = compute_grasp_transform(ee2, obj2);
  CHECK(norm(g2.obj_to_ee.t - Vec3{0, 0, 0.1}) < kTol);

  for (int rep = 0; rep < 50; ++rep) {
    const Pose ee = oracle::random_pose(rng);
    const Pose ob = oracle::random_pose(rng);
    const Pose common = oracle::random_pose(rng);
    const GraspTransform a = compute_grasp_transform(ee, ob);
    const GraspTransform b = compute_grasp_transform(compose(common, ee), compose(common, ob));
    CHECK(approx_equal(a.obj_to_ee, b.obj_to_ee, kTol, kTol));
  }
}

TEST_CASE("retarget: identity grasp, constant pose, rigid-attachment replay") {
  Rng rng(66);

  ObjectTrajAbs traj;
  for (int k = 0; k < 10; ++k) traj.poses.push_back(oracle::random_pose(rng));

  SUBCASE("identity grasp returns the object trajectory") {
    const auto ee = retarget(traj, GraspTransform{Pose::identity()});
    for (int k = 0; k < 10; ++k) CHECK(approx_equal(ee[k], traj.poses[k], kTol, kTol));
  }

  SUBCASE("constant object pose gives a constant ee pose") {
    ObjectTrajAbs constant;
    constant.poses.assign(6, traj.poses[0]);
    const GraspTransform g{oracle::random_pose(rng)};
    const auto ee = retarget(constant, g);
    for (int k = 1; k < 6; ++k) CHECK(approx_equal(ee[k], ee[0], kTol, kTol));
  }

  SUBCASE("rigid attachment reproduces the commanded object trajectory within 1e-6") {
    // 100 random trajectories: executing the retargeted ee poses with the
    // object rigidly attached (obj = ee * inv(g)) replays the input
    for (int rep = 0; rep < 100; ++rep) {
      ObjectTrajAbs t2;
      for (int k = 0; k < 8; ++k) t2.poses.push_back(oracle::random_pose(rng));
      const GraspTransform g{oracle::random_pose(rng)};
      const auto ee = retarget(t2, g);
      const Pose inv_g = invert(g.obj_to_ee);
      for (int k = 0; k < 8; ++k) {
        const Pose obj_replay = compose(ee[k], inv_g);
        CHECK(approx_equal(obj_replay, t2.poses[k], 1e-6, 1e-6));
      }
    }
  }

  SUBCASE("retargeting equivariance under a world-frame pose") {
    const Pose g_world = oracle::random_pose(rng);
    const GraspTransform g{oracle::random_pose(rng)};
    ObjectTrajAbs moved;
    for (const Pose& p : traj.poses) moved.poses.push_back(compose(g_world, p));
    const auto a = retarget(moved, g);
    const auto b = retarget(traj, g);
    for (size_t k = 0; k < a.size(); ++k)
      CHECK(approx_equal(a[k], compose(g_world, b[k]), kTol, kTol));
  }
}

TEST_CASE("training samples jsonl round trip") {
  Rng rng(67);
  std::vector<TrainingSample> samples;
  for (int i = 0; i < 5; ++i) {
    TrainingSample s;
    s.cloud_ref = "clouds/" + std::to_string(i) + ".ply";
    for (int k = 0; k < 4; ++k) {
      s.obj_abs.push_back(oracle::random_pose(rng));
      s.head_rel.push_back(oracle::random_pose(rng));
    }
    s.terminal = i >= 3 ? 1 : 0;
    s.current_obj_pose = oracle::random_pose(rng);
    samples.push_back(std::move(s));
  }
  const auto p = std::filesystem::temp_directory_path() / "ag_samples.jsonl";
  write_samples_jsonl(p, samples);
  const auto back = read_samples_jsonl(p);
  REQUIRE(back.size() == samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    CHECK(back[i].cloud_ref == samples[i].cloud_ref);
    CHECK(back[i].terminal == samples[i].terminal);
    REQUIRE(back[i].obj_abs.size() == samples[i].obj_abs.size());
    for (size_t k = 0; k < samples[i].obj_abs.size(); ++k) {
      CHECK(back[i].obj_abs[k].q.w == samples[i].obj_abs[k].q.w);
      CHECK(back[i].obj_abs[k].t.x == samples[i].obj_abs[k].t.x);
      CHECK(back[i].head_rel[k].q.z == samples[i].head_rel[k].q.z);
    }
    CHECK(back[i].current_obj_pose.t.y == samples[i].current_obj_pose.t.y);
  }
  std::filesystem::remove(p);
}
