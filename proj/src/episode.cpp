#include "activeglasses/episode.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ag {

namespace {
constexpr int kEpisodeVersion = 1;
constexpr const char* kEpisodeFormat = "activeglasses-episode";

std::string frame_dir_name(size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06zu", i);
  return buf;
}

std::string hex64(uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

uint64_t file_checksum(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + p.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return fnv1a64(buf.data(), buf.size());
}

}  // namespace

uint64_t fnv1a64(const void* data, size_t n) {
  const auto* p = static_cast<const uint8_t*>(data);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

Episode align_streams(const std::vector<TimedPoseSample>& pose_stream,
                      std::vector<RawFrame>&& frame_stream, const CalibrationRig& rig,
                      const Intrinsics& intr, const std::string& task_name, uint64_t seed,
                      AlignStats* stats) {
  if (pose_stream.empty() || frame_stream.empty())
    throw std::invalid_argument("align_streams: empty input stream");
  for (size_t i = 1; i < pose_stream.size(); ++i)
    if (!(pose_stream[i].timestamp > pose_stream[i - 1].timestamp))
      throw std::invalid_argument("align_streams: pose stream not strictly time-sorted");
  for (size_t i = 1; i < frame_stream.size(); ++i)
    if (!(frame_stream[i].timestamp > frame_stream[i - 1].timestamp))
      throw std::invalid_argument("align_streams: frame stream not strictly time-sorted");

  const double t_lo = pose_stream.front().timestamp;
  const double t_hi = pose_stream.back().timestamp;

  Episode ep;
  ep.rig = rig;
  ep.intrinsics = intr;
  ep.task_name = task_name;
  ep.seed = seed;

  int dropped = 0;
  for (auto& rf : frame_stream) {
    const double t = rf.timestamp;
    if (t < t_lo || t > t_hi) {
      ++dropped;
      continue;
    }
    // bracketing pose samples
    const auto it = std::upper_bound(
        pose_stream.begin(), pose_stream.end(), t,
        [](double v, const TimedPoseSample& s) { return v < s.timestamp; });
    const size_t hi = std::min(static_cast<size_t>(it - pose_stream.begin()),
                               pose_stream.size() - 1);
    const size_t lo = hi == 0 ? 0 : hi - 1;
    const TimedPoseSample& a = pose_stream[lo];
    const TimedPoseSample& b = pose_stream[hi];
    Pose head;
    if (hi == lo) {
      head = a.pose;
    } else {
      const double s = (t - a.timestamp) / (b.timestamp - a.timestamp);
      head = interpolate(a.pose, b.pose, s);
    }
    FrameRecord rec;
    rec.timestamp = t;
    rec.depth = std::move(rf.depth);
    rec.hand_mask = std::move(rf.hand_mask);
    rec.object_mask = std::move(rf.object_mask);
    rec.object_pose_cam = rf.object_pose_cam;
    rec.head_pose = head;
    ep.frames.push_back(std::move(rec));
  }
  if (ep.frames.empty())
    throw std::runtime_error("align_streams: zero overlapping coverage between streams");
  if (stats) stats->dropped_frames = dropped;
  return ep;
}

Episode label_termination(Episode ep) {
  if (ep.frames.size() < 6)
    throw std::invalid_argument(
        "label_termination: episode too short, need at least K=5 (six frames)");
  const size_t n = ep.frames.size();
  for (size_t i = 0; i < n; ++i) ep.frames[i].terminal = i + 5 >= n ? 1 : 0;
  return ep;
}

void save_episode(const Episode& ep, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "frames");

  nlohmann::json head_lines = nlohmann::json::array();
  {
    std::ofstream hp(dir / "head_poses.jsonl");
    std::ofstream op(dir / "object_poses.jsonl");
    if (!hp || !op) throw std::runtime_error("cannot write pose streams: " + dir.string());
    for (size_t i = 0; i < ep.frames.size(); ++i) {
      const FrameRecord& f = ep.frames[i];
      nlohmann::json line{{"timestamp", f.timestamp}, {"terminal", f.terminal},
                          {"pose", f.head_pose}};
      hp << line.dump() << "\n";
      if (f.object_pose_cam) {
        nlohmann::json ol{{"frame", i}, {"pose", *f.object_pose_cam}};
        op << ol.dump() << "\n";
      }
    }
  }

  nlohmann::json checksums = nlohmann::json::array();
  for (size_t i = 0; i < ep.frames.size(); ++i) {
    const fs::path fdir = dir / "frames" / frame_dir_name(i);
    fs::create_directories(fdir);
    const FrameRecord& f = ep.frames[i];
    write_depth_file(fdir / "depth.f32", f.depth);
    write_mask_file(fdir / "mask_hand.u8", f.hand_mask);
    write_mask_file(fdir / "mask_object.u8", f.object_mask);
    checksums.push_back(
        {{"depth", hex64(fnv1a64(f.depth.data.data(), f.depth.data.size() * sizeof(float)))},
         {"hand", hex64(fnv1a64(f.hand_mask.data.data(), f.hand_mask.data.size()))},
         {"object", hex64(fnv1a64(f.object_mask.data.data(), f.object_mask.data.size()))}});
  }

  nlohmann::json manifest{{"format", kEpisodeFormat},
                          {"version", kEpisodeVersion},
                          {"task", ep.task_name},
                          {"seed", ep.seed},
                          {"frame_count", ep.frames.size()},
                          {"intrinsics", ep.intrinsics},
                          {"rig", ep.rig},
                          {"checksums", checksums}};
  std::ofstream mf(dir / "manifest.json");
  if (!mf) throw std::runtime_error("cannot write manifest: " + dir.string());
  mf << manifest.dump(2) << "\n";
}

Episode load_episode(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw std::runtime_error("missing manifest: " + (dir / "manifest.json").string());
  nlohmann::json manifest;
  mf >> manifest;

  if (manifest.value("format", "") != kEpisodeFormat)
    throw std::runtime_error("not an episode directory: " + dir.string());
  const int version = manifest.at("version").get<int>();
  if (version != kEpisodeVersion)
    throw std::runtime_error("unsupported episode version " + std::to_string(version) +
                             " (expected " + std::to_string(kEpisodeVersion) + ")");

  Episode ep;
  ep.task_name = manifest.at("task").get<std::string>();
  ep.seed = manifest.at("seed").get<uint64_t>();
  manifest.at("intrinsics").get_to(ep.intrinsics);
  manifest.at("rig").get_to(ep.rig);
  const size_t n = manifest.at("frame_count").get<size_t>();
  const auto& checksums = manifest.at("checksums");

  std::ifstream hp(dir / "head_poses.jsonl");
  if (!hp) throw std::runtime_error("missing head_poses.jsonl: " + dir.string());
  std::string line;
  while (std::getline(hp, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    FrameRecord f;
    f.timestamp = j.at("timestamp").get<double>();
    f.terminal = j.at("terminal").get<int>();
    j.at("pose").get_to(f.head_pose);
    ep.frames.push_back(std::move(f));
  }
  if (ep.frames.size() != n)
    throw std::runtime_error("frame count mismatch between manifest and head_poses.jsonl");

  std::ifstream op(dir / "object_poses.jsonl");
  if (op) {
    while (std::getline(op, line)) {
      if (line.empty()) continue;
      const nlohmann::json j = nlohmann::json::parse(line);
      const size_t idx = j.at("frame").get<size_t>();
      if (idx >= n) throw std::runtime_error("object pose frame index out of range");
      Pose p;
      j.at("pose").get_to(p);
      ep.frames[idx].object_pose_cam = p;
    }
  }

  for (size_t i = 0; i < n; ++i) {
    const fs::path fdir = dir / "frames" / frame_dir_name(i);
    const std::string at = " (frame " + frame_dir_name(i) + ")";
    if (!fs::exists(fdir / "depth.f32"))
      throw std::runtime_error("missing frame file: depth.f32" + at);
    FrameRecord& f = ep.frames[i];
    try {
      f.depth = read_depth_file(fdir / "depth.f32", ep.intrinsics.width, ep.intrinsics.height);
      f.hand_mask = read_mask_file(fdir / "mask_hand.u8", ep.intrinsics.width, ep.intrinsics.height);
      f.object_mask =
          read_mask_file(fdir / "mask_object.u8", ep.intrinsics.width, ep.intrinsics.height);
    } catch (const std::exception& e) {
      throw std::runtime_error(std::string(e.what()) + at);
    }
    const auto& sums = checksums.at(i);
    if (hex64(fnv1a64(f.depth.data.data(), f.depth.data.size() * sizeof(float))) !=
        sums.at("depth").get<std::string>())
      throw std::runtime_error("depth checksum failure" + at);
    if (hex64(fnv1a64(f.hand_mask.data.data(), f.hand_mask.data.size())) !=
        sums.at("hand").get<std::string>())
      throw std::runtime_error("hand mask checksum failure" + at);
    if (hex64(fnv1a64(f.object_mask.data.data(), f.object_mask.data.size())) !=
        sums.at("object").get<std::string>())
      throw std::runtime_error("object mask checksum failure" + at);
  }
  return ep;
}

bool ValidationReport::all_pass() const {
  for (const auto& it : items)
    if (!it.pass) return false;
  return true;
}

std::string ValidationReport::summary() const {
  std::ostringstream os;
  for (const auto& it : items) {
    os << (it.pass ? "[pass] " : "[FAIL] ") << it.check;
    if (!it.detail.empty()) os << ": " << it.detail;
    os << "\n";
  }
  return os.str();
}

ValidationReport validate(const Episode& ep) {
  ValidationReport rep;
  const auto add = [&](const std::string& check, bool pass, const std::string& detail = "") {
    rep.items.push_back({check, pass, detail});
  };

  add("frame_count >= 6", ep.frames.size() >= 6,
      "got " + std::to_string(ep.frames.size()));

  bool monotone = true;
  std::string mono_detail;
  for (size_t i = 1; i < ep.frames.size(); ++i)
    if (!(ep.frames[i].timestamp > ep.frames[i - 1].timestamp)) {
      monotone = false;
      mono_detail = "violated at frame " + std::to_string(i);
      break;
    }
  add("timestamps strictly increasing", monotone, mono_detail);

  bool rig_ok = true;
  std::string rig_detail;
  try {
    ep.rig.validate();
  } catch (const std::exception& e) {
    rig_ok = false;
    rig_detail = e.what();
  }
  add("rig non-collinear", rig_ok, rig_detail);

  bool intr_ok = true;
  std::string intr_detail;
  try {
    ep.intrinsics.validate();
  } catch (const std::exception& e) {
    intr_ok = false;
    intr_detail = e.what();
  }
  add("intrinsics valid", intr_ok, intr_detail);

  bool dims_ok = true;
  std::string dims_detail;
  for (size_t i = 0; i < ep.frames.size(); ++i) {
    const FrameRecord& f = ep.frames[i];
    const bool ok = f.depth.width == ep.intrinsics.width && f.depth.height == ep.intrinsics.height &&
                    f.hand_mask.width == ep.intrinsics.width &&
                    f.hand_mask.height == ep.intrinsics.height &&
                    f.object_mask.width == ep.intrinsics.width &&
                    f.object_mask.height == ep.intrinsics.height;
    if (!ok) {
      dims_ok = false;
      dims_detail = "frame " + std::to_string(i);
      break;
    }
  }
  add("depth/mask dimensions match intrinsics", dims_ok, dims_detail);

  bool term_range_ok = true;
  for (const auto& f : ep.frames)
    if (f.terminal != 0 && f.terminal != 1) term_range_ok = false;
  add("terminal labels in {0,1}", term_range_ok);

  int n_terminal = 0;
  for (const auto& f : ep.frames) n_terminal += f.terminal;
  if (n_terminal > 0) {
    bool suffix = n_terminal == 5;
    for (size_t i = 0; i + 5 < ep.frames.size() && suffix; ++i)
      if (ep.frames[i].terminal != 0) suffix = false;
    for (size_t i = ep.frames.size() >= 5 ? ep.frames.size() - 5 : 0;
         i < ep.frames.size() && suffix; ++i)
      if (ep.frames[i].terminal != 1) suffix = false;
    add("terminal labels form the five-frame suffix", suffix,
        "count " + std::to_string(n_terminal));
  }
  return rep;
}

}  // namespace ag
