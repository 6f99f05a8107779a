#include "activeglasses/pipeline.hpp"

#include <algorithm>
#include <cstdio>

#include "activeglasses/rng.hpp"

namespace ag {

Episode generate_episode(const SceneSpec& scene, const DemoScript& script,
                         const StreamRates& rates, const Intrinsics& intr, uint64_t seed) {
  RawStreams streams = generate_demo(scene, script, rates, intr, seed);

  CalibrationRig rig;
  rig.sphere_radius = scene.calib_spheres[0].radius;
  rig.glass_to_cam = streams.glass_to_cam;
  rig.sphere_centers_cam0 = sphere_centers_from_masks(
      streams.depth_frame0, streams.sphere_masks_frame0, intr, rig.sphere_radius);
  rig.validate();

  Episode ep = align_streams(streams.head_poses, std::move(streams.frames), rig, intr,
                             scene.task_kind, seed);
  return label_termination(std::move(ep));
}

ProcessedEpisode process_episode(const Episode& ep, const PolicyConfig& pcfg) {
  const size_t n = ep.frames.size();
  const WorldAnchor anchor = world_frame_from_spheres(ep.rig.sphere_centers_cam0[0],
                                                      ep.rig.sphere_centers_cam0[1],
                                                      ep.rig.sphere_centers_cam0[2]);
  std::vector<Pose> cam_to_world(n);
  std::vector<Pose> cam_poses(n);  // head stream expressed at the camera mount
  const Pose cam_to_glass = invert(ep.rig.glass_to_cam);
  for (size_t i = 0; i < n; ++i) {
    cam_to_world[i] =
        propagate_cam_to_world(anchor, ep.frames[0].head_pose, ep.frames[i].head_pose,
                               ep.rig.glass_to_cam);
    cam_poses[i] = compose(ep.frames[i].head_pose, cam_to_glass);
  }

  ProcessedEpisode out;
  // world object trajectory; counts interpolation fill-ins
  for (size_t i = 0; i < n; ++i)
    if (!ep.frames[i].object_pose_cam) ++out.gap_filled_frames;
  const std::vector<Pose> world_obj = extract_object_traj(ep, cam_to_world);

  for (size_t t = 0; t < n; ++t) {
    const FrameRecord& f = ep.frames[t];
    LabeledCloud cloud = backproject(f.depth, ep.intrinsics);
    cloud = remove_masked(cloud, f.hand_mask);
    cloud = cloud_to_world(cam_to_world[t], cloud);
    cloud = crop_workspace(cloud, pcfg.norm_box);
    cloud = voxel_downsample(cloud, pcfg.voxel);
    if (cloud.size() == 0) {
      ++out.dropped_frames;
      continue;
    }

    TrainingSample s;
    for (int k = 0; k < pcfg.horizon; ++k)
      s.obj_abs.push_back(world_obj[std::min(t + 1 + static_cast<size_t>(k), n - 1)]);
    const HeadTrajRel head = relative_head_window(cam_poses, t, pcfg.horizon);
    s.head_rel = head.deltas;
    s.terminal = f.terminal;
    s.current_obj_pose = world_obj[t];
    out.samples.push_back(std::move(s));
    out.clouds.push_back(std::move(cloud));
  }
  return out;
}

std::vector<std::filesystem::path> generate_episodes(const SceneSpec& base_scene,
                                                     const std::vector<RandomizationGroup>& groups,
                                                     const GenerateConfig& gc,
                                                     const Intrinsics& intr,
                                                     const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> dirs;
  for (int i = 0; i < gc.n; ++i) {
    const uint64_t seed_i = Rng::derive_seed(gc.seed, static_cast<uint64_t>(i));
    const SceneSpec scene =
        gc.randomize ? randomize_scene(base_scene, groups, seed_i) : base_scene;
    const Episode ep = generate_episode(scene, make_demo_script(scene), gc.rates, intr, seed_i);
    char name[32];
    std::snprintf(name, sizeof(name), "ep_%04d", i);
    const auto dir = out_dir / name;
    save_episode(ep, dir);
    dirs.push_back(dir);
  }
  return dirs;
}

ProcessReport process_episodes(const std::filesystem::path& in_dir,
                               const std::filesystem::path& out_dir, const PolicyConfig& pcfg) {
  std::vector<std::filesystem::path> ep_dirs;
  for (const auto& e : std::filesystem::directory_iterator(in_dir))
    if (e.is_directory() && std::filesystem::exists(e.path() / "manifest.json"))
      ep_dirs.push_back(e.path());
  std::sort(ep_dirs.begin(), ep_dirs.end());
  if (ep_dirs.empty())
    throw std::runtime_error("process: no episode directories under " + in_dir.string());

  std::filesystem::create_directories(out_dir / "clouds");
  ProcessReport report;
  std::vector<TrainingSample> all_samples;
  for (const auto& dir : ep_dirs) {
    try {
      const Episode ep = load_episode(dir);
      ProcessedEpisode pe = process_episode(ep, pcfg);
      for (size_t i = 0; i < pe.samples.size(); ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "%s_%06zu.ply", dir.filename().c_str(), i);
        write_ply(out_dir / "clouds" / name, pe.clouds[i]);
        pe.samples[i].cloud_ref = std::string("clouds/") + name;
        all_samples.push_back(std::move(pe.samples[i]));
      }
      report.episodes += 1;
      report.gap_filled_frames += pe.gap_filled_frames;
      report.dropped_frames += pe.dropped_frames;
    } catch (const std::exception& e) {
      report.failed_episodes.push_back(dir.filename().string() + ": " + e.what());
    }
  }
  report.samples = static_cast<int>(all_samples.size());
  write_samples_jsonl(out_dir / "samples.jsonl", all_samples);
  return report;
}

std::vector<EncodedSample> load_dataset(const std::filesystem::path& samples_jsonl,
                                        const PolicyConfig& pcfg) {
  const auto samples = read_samples_jsonl(samples_jsonl);
  const auto base = samples_jsonl.parent_path();
  std::vector<EncodedSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    const LabeledCloud cloud = read_ply(base / s.cloud_ref);
    out.push_back(encode_sample(s, cloud, pcfg));
  }
  return out;
}

std::vector<EncodedSample> encode_processed(const std::vector<ProcessedEpisode>& eps,
                                            const PolicyConfig& pcfg) {
  std::vector<EncodedSample> out;
  for (const auto& pe : eps)
    for (size_t i = 0; i < pe.samples.size(); ++i)
      out.push_back(encode_sample(pe.samples[i], pe.clouds[i], pcfg));
  return out;
}

}  // namespace ag
