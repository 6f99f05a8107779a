// End-to-end dataset pipeline: synthetic demonstration -> aligned labeled
// episode -> world-frame training samples. The in-memory entry points back
// the CLI subcommands and keep the benchmark suites free of disk round trips.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "activeglasses/episode.hpp"
#include "activeglasses/policy.hpp"
#include "activeglasses/simworld.hpp"
#include "activeglasses/traj.hpp"

namespace ag {

// generate + align + label + rig construction, no disk involved
Episode generate_episode(const SceneSpec& scene, const DemoScript& script,
                         const StreamRates& rates, const Intrinsics& intr, uint64_t seed);

struct ProcessedEpisode {
  std::vector<TrainingSample> samples;  // cloud_ref left empty
  std::vector<LabeledCloud> clouds;     // one per sample, world frame
  int gap_filled_frames = 0;
  int dropped_frames = 0;
};

// §-pipeline per episode: per-frame anchors via head-pose propagation, hand
// removal, unification, crop, voxel downsample, horizon windows
ProcessedEpisode process_episode(const Episode& ep, const PolicyConfig& pcfg);

struct GenerateConfig {
  int n = 1;
  StreamRates rates;
  bool randomize = true;
  uint64_t seed = 0;
};

// episode directories out_dir/ep_0000 ... ; returns their paths
std::vector<std::filesystem::path> generate_episodes(const SceneSpec& base_scene,
                                                     const std::vector<RandomizationGroup>& groups,
                                                     const GenerateConfig& gc,
                                                     const Intrinsics& intr,
                                                     const std::filesystem::path& out_dir);

struct ProcessReport {
  int episodes = 0;
  int samples = 0;
  int gap_filled_frames = 0;
  int dropped_frames = 0;
  std::vector<std::string> failed_episodes;  // "<dir>: <reason>"
};

// processes every episode directory under in_dir into out_dir/samples.jsonl
// plus out_dir/clouds/*.ply
ProcessReport process_episodes(const std::filesystem::path& in_dir,
                               const std::filesystem::path& out_dir, const PolicyConfig& pcfg);

// reads samples.jsonl plus the referenced clouds and encodes them for training
std::vector<EncodedSample> load_dataset(const std::filesystem::path& samples_jsonl,
                                        const PolicyConfig& pcfg);

// in-memory variant used by the benchmark suites
std::vector<EncodedSample> encode_processed(const std::vector<ProcessedEpisode>& eps,
                                            const PolicyConfig& pcfg);

}  // namespace ag
