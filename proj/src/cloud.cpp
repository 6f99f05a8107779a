#include "activeglasses/cloud.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "activeglasses/kernels.hpp"

namespace ag {

void Intrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw std::invalid_argument("intrinsics: fx, fy must be > 0");
  if (width <= 0 || height <= 0) throw std::invalid_argument("intrinsics: empty resolution");
  if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height))
    throw std::invalid_argument("intrinsics: principal point outside image");
}

void to_json(nlohmann::json& j, const Intrinsics& in) {
  j = nlohmann::json{{"fx", in.fx}, {"fy", in.fy}, {"cx", in.cx},
                     {"cy", in.cy}, {"width", in.width}, {"height", in.height}};
}

void from_json(const nlohmann::json& j, Intrinsics& in) {
  in.fx = j.at("fx").get<double>();
  in.fy = j.at("fy").get<double>();
  in.cx = j.at("cx").get<double>();
  in.cy = j.at("cy").get<double>();
  in.width = j.at("width").get<int>();
  in.height = j.at("height").get<int>();
}

DepthFrame DepthFrame::invalid(int w, int h) {
  DepthFrame d;
  d.width = w;
  d.height = h;
  d.data.assign(static_cast<size_t>(w) * h, std::numeric_limits<float>::quiet_NaN());
  return d;
}

Mask Mask::empty(int w, int h) {
  Mask m;
  m.width = w;
  m.height = h;
  m.data.assign(static_cast<size_t>(w) * h, 0);
  return m;
}

size_t Mask::count() const {
  size_t n = 0;
  for (uint8_t v : data) n += (v != 0);
  return n;
}

Box3 Box3::infinite() {
  const double inf = std::numeric_limits<double>::infinity();
  return {{-inf, -inf, -inf}, {inf, inf, inf}};
}

void to_json(nlohmann::json& j, const Box3& b) {
  j = nlohmann::json{{"min", b.min}, {"max", b.max}};
}

void from_json(const nlohmann::json& j, Box3& b) {
  j.at("min").get_to(b.min);
  j.at("max").get_to(b.max);
}

Box3 default_workspace() { return {{-0.2, -0.2, -0.05}, {1.0, 1.0, 0.8}}; }

LabeledCloud backproject(const DepthFrame& depth, const Intrinsics& intr,
                         const ColorImage* color) {
  intr.validate();
  if (depth.width != intr.width || depth.height != intr.height)
    throw std::invalid_argument("backproject: depth dimensions do not match intrinsics");
  if (color && (color->width != intr.width || color->height != intr.height))
    throw std::invalid_argument("backproject: color dimensions do not match intrinsics");

  const int w = intr.width, h = intr.height;
  LabeledCloud out;
  out.tag = FrameTag::camera;
  out.xs.reserve(depth.data.size());
  out.ys.reserve(depth.data.size());
  out.zs.reserve(depth.data.size());
  out.pixels.reserve(depth.data.size());
  if (color) out.colors.reserve(depth.data.size());

  std::vector<double> rx(w), ry(w), rz(w);
  for (int v = 0; v < h; ++v) {
    kern::backproject_row(depth.data.data() + static_cast<size_t>(v) * w, w,
                          static_cast<double>(v), intr.fx, intr.fy, intr.cx, intr.cy,
                          rx.data(), ry.data(), rz.data());
    for (int u = 0; u < w; ++u) {
      if (!std::isfinite(rz[u])) continue;
      out.xs.push_back(rx[u]);
      out.ys.push_back(ry[u]);
      out.zs.push_back(rz[u]);
      out.pixels.push_back(static_cast<uint32_t>(v) * w + u);
      if (color) out.colors.push_back(color->data[static_cast<size_t>(v) * w + u]);
    }
  }
  return out;
}

LabeledCloud remove_masked(const LabeledCloud& cloud, const Mask& mask) {
  if (!cloud.has_pixels() || cloud.pixels.size() != cloud.size())
    throw std::invalid_argument("remove_masked: pixel provenance missing or length mismatch");
  LabeledCloud out;
  out.tag = cloud.tag;
  const size_t npx = static_cast<size_t>(mask.width) * mask.height;
  for (size_t i = 0; i < cloud.size(); ++i) {
    const uint32_t px = cloud.pixels[i];
    if (px >= npx) throw std::invalid_argument("remove_masked: provenance outside mask grid");
    if (mask.data[px] != 0) continue;
    out.push_point(cloud.point(i));
    out.pixels.push_back(px);
    if (cloud.has_colors()) out.colors.push_back(cloud.colors[i]);
  }
  return out;
}

LabeledCloud crop_workspace(const LabeledCloud& cloud, const Box3& bounds) {
  if (cloud.tag != FrameTag::world)
    throw std::invalid_argument("crop_workspace: cloud must be world-tagged");
  LabeledCloud out;
  out.tag = FrameTag::world;
  for (size_t i = 0; i < cloud.size(); ++i) {
    const Vec3 p = cloud.point(i);
    if (!bounds.contains(p)) continue;
    out.push_point(p);
    if (cloud.has_colors()) out.colors.push_back(cloud.colors[i]);
    if (cloud.has_pixels()) out.pixels.push_back(cloud.pixels[i]);
  }
  return out;
}

namespace {

using VoxelKey = std::array<int64_t, 3>;

VoxelKey voxel_key(const Vec3& p, double voxel) {
  return {static_cast<int64_t>(std::floor(p.x / voxel)),
          static_cast<int64_t>(std::floor(p.y / voxel)),
          static_cast<int64_t>(std::floor(p.z / voxel))};
}

}  // namespace

LabeledCloud voxel_downsample(const LabeledCloud& cloud, double voxel) {
  if (!(voxel > 0.0)) throw std::invalid_argument("voxel_downsample: voxel size must be > 0");

  std::map<VoxelKey, std::vector<uint32_t>> cells;
  for (size_t i = 0; i < cloud.size(); ++i)
    cells[voxel_key(cloud.point(i), voxel)].push_back(static_cast<uint32_t>(i));

  LabeledCloud out;
  out.tag = cloud.tag;
  out.xs.reserve(cells.size());
  out.ys.reserve(cells.size());
  out.zs.reserve(cells.size());
  if (cloud.has_colors()) out.colors.reserve(cells.size());

  for (auto& [key, idx] : cells) {
    // canonical within-voxel order makes the centroid independent of input order
    std::sort(idx.begin(), idx.end(), [&](uint32_t a, uint32_t b) {
      const Vec3 pa = cloud.point(a), pb = cloud.point(b);
      if (pa.x != pb.x) return pa.x < pb.x;
      if (pa.y != pb.y) return pa.y < pb.y;
      if (pa.z != pb.z) return pa.z < pb.z;
      const auto ca = cloud.has_colors() ? cloud.colors[a] : std::array<uint8_t, 3>{};
      const auto cb = cloud.has_colors() ? cloud.colors[b] : std::array<uint8_t, 3>{};
      return ca < cb;
    });
    Vec3 sum{};
    double cr = 0, cg = 0, cb = 0;
    for (uint32_t i : idx) {
      sum = sum + cloud.point(i);
      if (cloud.has_colors()) {
        cr += cloud.colors[i][0];
        cg += cloud.colors[i][1];
        cb += cloud.colors[i][2];
      }
    }
    const double n = static_cast<double>(idx.size());
    out.push_point({sum.x / n, sum.y / n, sum.z / n});
    if (cloud.has_colors())
      out.colors.push_back({static_cast<uint8_t>(std::lround(cr / n)),
                            static_cast<uint8_t>(std::lround(cg / n)),
                            static_cast<uint8_t>(std::lround(cb / n))});
  }
  return out;
}

void write_depth_file(const std::filesystem::path& p, const DepthFrame& d) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + p.string());
  f.write(reinterpret_cast<const char*>(d.data.data()),
          static_cast<std::streamsize>(d.data.size() * sizeof(float)));
  if (!f) throw std::runtime_error("write failed: " + p.string());
}

DepthFrame read_depth_file(const std::filesystem::path& p, int width, int height) {
  std::ifstream f(p, std::ios::binary | std::ios::ate);
  if (!f) throw std::runtime_error("cannot open: " + p.string());
  const auto bytes = static_cast<size_t>(f.tellg());
  const size_t want = static_cast<size_t>(width) * height * sizeof(float);
  if (bytes != want)
    throw std::runtime_error("depth file size mismatch (truncated or wrong dims): " + p.string());
  DepthFrame d;
  d.width = width;
  d.height = height;
  d.data.resize(static_cast<size_t>(width) * height);
  f.seekg(0);
  f.read(reinterpret_cast<char*>(d.data.data()), static_cast<std::streamsize>(want));
  if (!f) throw std::runtime_error("read failed: " + p.string());
  return d;
}

void write_mask_file(const std::filesystem::path& p, const Mask& m) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + p.string());
  f.write(reinterpret_cast<const char*>(m.data.data()),
          static_cast<std::streamsize>(m.data.size()));
  if (!f) throw std::runtime_error("write failed: " + p.string());
}

Mask read_mask_file(const std::filesystem::path& p, int width, int height) {
  std::ifstream f(p, std::ios::binary | std::ios::ate);
  if (!f) throw std::runtime_error("cannot open: " + p.string());
  const auto bytes = static_cast<size_t>(f.tellg());
  const size_t want = static_cast<size_t>(width) * height;
  if (bytes != want)
    throw std::runtime_error("mask file size mismatch (truncated or wrong dims): " + p.string());
  Mask m;
  m.width = width;
  m.height = height;
  m.data.resize(want);
  f.seekg(0);
  f.read(reinterpret_cast<char*>(m.data.data()), static_cast<std::streamsize>(want));
  if (!f) throw std::runtime_error("read failed: " + p.string());
  return m;
}

void write_ply(const std::filesystem::path& p, const LabeledCloud& cloud) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + p.string());
  f << "ply\nformat binary_little_endian 1.0\n"
    << "element vertex " << cloud.size() << "\n"
    << "property float x\nproperty float y\nproperty float z\n"
    << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
    << "end_header\n";
  for (size_t i = 0; i < cloud.size(); ++i) {
    const float xyz[3] = {static_cast<float>(cloud.xs[i]), static_cast<float>(cloud.ys[i]),
                          static_cast<float>(cloud.zs[i])};
    const std::array<uint8_t, 3> rgb =
        cloud.has_colors() ? cloud.colors[i] : std::array<uint8_t, 3>{255, 255, 255};
    f.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
    f.write(reinterpret_cast<const char*>(rgb.data()), 3);
  }
  if (!f) throw std::runtime_error("write failed: " + p.string());
}

LabeledCloud read_ply(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + p.string());
  std::string line;
  size_t n = 0;
  bool header_ok = false;
  std::vector<std::string> props;
  if (!std::getline(f, line) || line != "ply") throw std::runtime_error("not a ply file: " + p.string());
  while (std::getline(f, line)) {
    if (line == "end_header") {
      header_ok = true;
      break;
    }
    std::istringstream ss(line);
    std::string kw;
    ss >> kw;
    if (kw == "format") {
      std::string fmt;
      ss >> fmt;
      if (fmt != "binary_little_endian")
        throw std::runtime_error("unsupported ply format: " + fmt);
    } else if (kw == "element") {
      std::string what;
      ss >> what >> n;
      if (what != "vertex") throw std::runtime_error("unsupported ply element: " + what);
    } else if (kw == "property") {
      std::string type, name;
      ss >> type >> name;
      props.push_back(name);
    }
  }
  const std::vector<std::string> want = {"x", "y", "z", "red", "green", "blue"};
  if (!header_ok || props != want)
    throw std::runtime_error("unsupported ply layout: " + p.string());

  LabeledCloud cloud;
  cloud.tag = FrameTag::world;
  cloud.xs.reserve(n);
  cloud.ys.reserve(n);
  cloud.zs.reserve(n);
  cloud.colors.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    float xyz[3];
    std::array<uint8_t, 3> rgb;
    f.read(reinterpret_cast<char*>(xyz), sizeof(xyz));
    f.read(reinterpret_cast<char*>(rgb.data()), 3);
    if (!f) throw std::runtime_error("truncated ply: " + p.string());
    cloud.push_point({xyz[0], xyz[1], xyz[2]});
    cloud.colors.push_back(rgb);
  }
  return cloud;
}

}  // namespace ag
