// Per-frame observation pipeline: pinhole back-projection, mask removal,
// workspace cropping, voxel downsampling, and the on-disk formats for depth
// maps, masks and point clouds.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <json.hpp>

#include "activeglasses/geometry.hpp"

namespace ag {

struct Intrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;

  void validate() const;  // fx,fy > 0; principal point inside the image
  size_t pixel_count() const { return static_cast<size_t>(width) * height; }
};

void to_json(nlohmann::json& j, const Intrinsics& in);
void from_json(const nlohmann::json& j, Intrinsics& in);

// Row-major depth grid in meters. Invalid pixels are non-finite (never zero).
struct DepthFrame {
  int width = 0, height = 0;
  std::vector<float> data;

  static DepthFrame invalid(int w, int h);
  float at(int u, int v) const { return data[static_cast<size_t>(v) * width + u]; }
  float& at(int u, int v) { return data[static_cast<size_t>(v) * width + u]; }
};

// Binary grid, 0 / 255.
struct Mask {
  int width = 0, height = 0;
  std::vector<uint8_t> data;

  static Mask empty(int w, int h);
  bool at(int u, int v) const { return data[static_cast<size_t>(v) * width + u] != 0; }
  void set(int u, int v, bool on) { data[static_cast<size_t>(v) * width + u] = on ? 255 : 0; }
  size_t count() const;
};

struct ColorImage {
  int width = 0, height = 0;
  std::vector<std::array<uint8_t, 3>> data;
};

enum class FrameTag { camera, world };

// Point cloud with optional per-point color and pixel provenance. Points are
// stored SoA so the transform kernels can run across them.
struct LabeledCloud {
  std::vector<double> xs, ys, zs;
  std::vector<std::array<uint8_t, 3>> colors;  // empty or size() entries
  std::vector<uint32_t> pixels;                // source pixel v*width+u; empty or size() entries
  FrameTag tag = FrameTag::camera;

  size_t size() const { return xs.size(); }
  bool has_colors() const { return !colors.empty(); }
  bool has_pixels() const { return !pixels.empty(); }
  Vec3 point(size_t i) const { return {xs[i], ys[i], zs[i]}; }
  void push_point(const Vec3& p) {
    xs.push_back(p.x);
    ys.push_back(p.y);
    zs.push_back(p.z);
  }
};

struct Box3 {
  Vec3 min, max;

  static Box3 infinite();
  bool contains(const Vec3& p) const {
    return p.x >= min.x && p.x <= max.x && p.y >= min.y && p.y <= max.y && p.z >= min.z &&
           p.z <= max.z;
  }
};

void to_json(nlohmann::json& j, const Box3& b);
void from_json(const nlohmann::json& j, Box3& b);

// Default workspace crop box in the calibrated world frame; override per task.
Box3 default_workspace();

// Pixel (u,v) with finite depth d maps to ((u-cx)d/fx, (v-cy)d/fy, d).
// Invalid depths are skipped; the result carries pixel provenance (and color
// when an image is supplied). Camera-frame tag.
LabeledCloud backproject(const DepthFrame& depth, const Intrinsics& intr,
                         const ColorImage* color = nullptr);

// Drops exactly the points whose provenance pixel is mask-true; survivor
// order preserved. Requires provenance on the cloud.
LabeledCloud remove_masked(const LabeledCloud& cloud, const Mask& mask);

// Keeps points inside bounds. Requires a world-tagged cloud.
LabeledCloud crop_workspace(const LabeledCloud& cloud, const Box3& bounds);

// One centroid (mean color) per occupied voxel. Output is canonically ordered
// by voxel key and within-voxel accumulation is order-canonical, so the result
// is identical for any permutation of the input. Provenance is dropped.
LabeledCloud voxel_downsample(const LabeledCloud& cloud, double voxel);

// raw little-endian file formats (depth: float32, mask: 0/255 bytes)
void write_depth_file(const std::filesystem::path& p, const DepthFrame& d);
DepthFrame read_depth_file(const std::filesystem::path& p, int width, int height);
void write_mask_file(const std::filesystem::path& p, const Mask& m);
Mask read_mask_file(const std::filesystem::path& p, int width, int height);

// binary little-endian PLY, x/y/z float32 + red/green/blue uchar
void write_ply(const std::filesystem::path& p, const LabeledCloud& cloud);
LabeledCloud read_ply(const std::filesystem::path& p);

}  // namespace ag
