// Demonstration data model: time-aligned frames, termination labels and the
// on-disk episode format (manifest.json + jsonl pose streams + raw frames).

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "activeglasses/calib.hpp"
#include "activeglasses/cloud.hpp"
#include "activeglasses/geometry.hpp"
#include "activeglasses/simworld.hpp"

namespace ag {

struct FrameRecord {
  double timestamp = 0;
  DepthFrame depth;
  Mask hand_mask;
  Mask object_mask;
  Pose head_pose;  // tracking frame
  std::optional<Pose> object_pose_cam;
  int terminal = 0;
};

struct Episode {
  std::vector<FrameRecord> frames;
  CalibrationRig rig;
  Intrinsics intrinsics;
  std::string task_name;
  uint64_t seed = 0;
};

struct AlignStats {
  int dropped_frames = 0;
};

// Pairs every frame with the head pose interpolated at the frame timestamp.
// Frames outside the pose stream's coverage are dropped and counted. Throws
// when the streams do not overlap at all.
Episode align_streams(const std::vector<TimedPoseSample>& pose_stream,
                      std::vector<RawFrame>&& frame_stream, const CalibrationRig& rig,
                      const Intrinsics& intr, const std::string& task_name, uint64_t seed,
                      AlignStats* stats = nullptr);

// Marks the last five frames terminal=1, all others 0. Episodes need K >= 5
// (at least six frames). Idempotent.
Episode label_termination(Episode ep);

void save_episode(const Episode& ep, const std::filesystem::path& dir);
Episode load_episode(const std::filesystem::path& dir);

struct ValidationItem {
  std::string check;
  bool pass = false;
  std::string detail;
};

struct ValidationReport {
  std::vector<ValidationItem> items;
  bool all_pass() const;
  std::string summary() const;
};

ValidationReport validate(const Episode& ep);

uint64_t fnv1a64(const void* data, size_t n);

}  // namespace ag
