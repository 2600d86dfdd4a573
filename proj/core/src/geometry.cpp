#include "geovoxel/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Geometry>

#include "geovoxel/error.hpp"

namespace geovoxel {

namespace {

constexpr double kNodeTolerance = 1e-9;

// Gathers a trilinear sample at continuous lattice coordinate `q` into `out`
// (size channels, overwritten) and returns the interpolated occupancy.
double SampleLattice(const VoxelGrid& grid, const Eigen::Vector3d& q, double* out) {
  const GridSpec& spec = grid.spec();
  const int channels = grid.channels();
  std::fill(out, out + channels, 0.0);

  std::array<int, 3> base{};
  std::array<double, 3> frac{};
  bool on_node = true;
  for (int a = 0; a < 3; ++a) {
    if (!(q[a] > -1.0 && q[a] < static_cast<double>(spec.dims[a]))) return 0.0;
    // Coordinates within rounding error of a node snap onto it, so voxel
    // centers reproduce stored values exactly.
    const double nearest = std::round(q[a]);
    const double fl = std::abs(q[a] - nearest) <= kNodeTolerance ? nearest : std::floor(q[a]);
    base[a] = static_cast<int>(fl);
    frac[a] = std::abs(q[a] - nearest) <= kNodeTolerance ? 0.0 : q[a] - fl;
    if (frac[a] != 0.0) on_node = false;
  }

  const auto& data = grid.data();
  const auto& occ = grid.occupancy();
  if (on_node) {
    for (int a = 0; a < 3; ++a)
      if (base[a] < 0 || base[a] >= spec.dims[a]) return 0.0;
    const std::size_t v = spec.Index(base[0], base[1], base[2]);
    std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(v * channels), channels, out);
    return occ[v];
  }

  double weight = 0.0;
  for (int corner = 0; corner < 8; ++corner) {
    double w = 1.0;
    std::array<int, 3> c{};
    bool inside = true;
    for (int a = 0; a < 3; ++a) {
      const int bit = (corner >> (2 - a)) & 1;
      c[a] = base[a] + bit;
      w *= bit ? frac[a] : 1.0 - frac[a];
      if (c[a] < 0 || c[a] >= spec.dims[a]) inside = false;
    }
    if (!inside || w == 0.0) continue;
    const std::size_t v = spec.Index(c[0], c[1], c[2]);
    const double* f = data.data() + v * static_cast<std::size_t>(channels);
    for (int ch = 0; ch < channels; ++ch) out[ch] += w * f[ch];
    weight += w * occ[v];
  }
  return weight;
}

void CheckImageMatches(int width, int height, const CameraIntrinsics& k, const char* what) {
  if (width != k.width || height != k.height) {
    throw InputError(std::string(what) + " is " + std::to_string(width) + "x" +
                     std::to_string(height) + " but intrinsics expect " +
                     std::to_string(k.width) + "x" + std::to_string(k.height));
  }
}

}  // namespace

CameraIntrinsics CameraIntrinsics::FromHorizontalFov(int width, int height, double hfov_degrees) {
  if (width <= 0 || height <= 0) throw InputError("image size must be positive");
  if (!(hfov_degrees > 0.0 && hfov_degrees < 180.0)) {
    throw InputError("horizontal field of view must be in (0, 180) degrees");
  }
  CameraIntrinsics k;
  k.width = width;
  k.height = height;
  k.fx = 0.5 * width / std::tan(0.5 * hfov_degrees * M_PI / 180.0);
  k.fy = k.fx;
  k.cx = 0.5 * (width - 1);
  k.cy = 0.5 * (height - 1);
  return k;
}

void CameraIntrinsics::Validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw InputError("focal lengths must be positive");
  if (width <= 0 || height <= 0) throw InputError("image size must be positive");
  if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height)) {
    throw InputError("principal point must lie inside the image");
  }
}

RigidPose RigidPose::Translation(const Eigen::Vector3d& t) {
  RigidPose p;
  p.translation = t;
  return p;
}

RigidPose RigidPose::FromAxisAngle(const Eigen::Vector3d& axis, double angle_radians,
                                   const Eigen::Vector3d& t) {
  RigidPose p;
  p.rotation = Eigen::AngleAxisd(angle_radians, axis.normalized()).toRotationMatrix();
  p.translation = t;
  return p;
}

bool RigidPose::IsValid(double tolerance) const {
  if (!rotation.allFinite() || !translation.allFinite()) return false;
  const double ortho = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).norm();
  return ortho <= tolerance && std::abs(rotation.determinant() - 1.0) <= tolerance;
}

RigidPose invert_pose(const RigidPose& p) {
  RigidPose inv;
  inv.rotation = p.rotation.transpose();
  inv.translation = -(inv.rotation * p.translation);
  return inv;
}

RigidPose compose_pose(const RigidPose& a, const RigidPose& b) {
  RigidPose out;
  out.rotation = a.rotation * b.rotation;
  out.translation = a.rotation * b.translation + a.translation;
  return out;
}

void GridSpec::Validate() const {
  if (!(voxel_size > 0.0) || !std::isfinite(voxel_size)) {
    throw InputError("voxel_size must be positive and finite");
  }
  if (dims[0] < 1 || dims[1] < 1 || dims[2] < 1) throw InputError("grid dims must be >= 1");
  if (!origin.allFinite()) throw InputError("grid origin must be finite");
}

std::array<int, 3> GridSpec::Coords(std::size_t index) const {
  const auto dz = static_cast<std::size_t>(dims[2]);
  const auto dy = static_cast<std::size_t>(dims[1]);
  return {static_cast<int>(index / (dy * dz)), static_cast<int>((index / dz) % dy),
          static_cast<int>(index % dz)};
}

VoxelGrid::VoxelGrid(const GridSpec& spec, int channels)
    : spec_(spec),
      channels_(channels),
      data_(spec.num_voxels() * static_cast<std::size_t>(std::max(channels, 0)), 0.0),
      occupancy_(spec.num_voxels(), 0.0) {
  spec.Validate();
  if (channels < 1) throw InputError("voxel grid needs at least one channel");
}

std::vector<UnprojectedPoint> unproject_depth(const DepthImage& depth, const CameraIntrinsics& k,
                                              const RigidPose& cam_to_world) {
  CheckImageMatches(depth.width, depth.height, k, "depth image");
  std::vector<UnprojectedPoint> points;
  points.reserve(depth.depth.size());
  for (int v = 0; v < depth.height; ++v) {
    for (int u = 0; u < depth.width; ++u) {
      const double d = depth.at(u, v);
      if (d == kNoHitDepth) continue;
      const Eigen::Vector3d cam((u - k.cx) * d / k.fx, (v - k.cy) * d / k.fy, d);
      points.push_back({cam_to_world.Apply(cam), u, v});
    }
  }
  return points;
}

VoxelGrid lift_to_grid(const RgbImage& rgb, const DepthImage& depth, const CameraIntrinsics& k,
                       const RigidPose& cam_to_world, const GridSpec& spec) {
  CheckImageMatches(rgb.width, rgb.height, k, "rgb image");
  const auto points = unproject_depth(depth, k, cam_to_world);

  VoxelGrid grid(spec, 3);
  std::vector<double> weight_sum(spec.num_voxels(), 0.0);
  auto& data = grid.data();

  // Sequential accumulation in pixel order keeps the result deterministic.
  for (const auto& p : points) {
    const Eigen::Vector3d q = spec.ToLattice(p.point);
    std::array<int, 3> base{};
    std::array<double, 3> frac{};
    bool inside = true;
    for (int a = 0; a < 3; ++a) {
      if (!(q[a] >= 0.0 && q[a] <= static_cast<double>(spec.dims[a] - 1))) {
        inside = false;
        break;
      }
      const double fl = std::floor(q[a]);
      base[a] = static_cast<int>(fl);
      frac[a] = q[a] - fl;
    }
    if (!inside) continue;

    const auto color = rgb.at(p.u, p.v);
    for (int corner = 0; corner < 8; ++corner) {
      double w = 1.0;
      std::array<int, 3> c{};
      for (int a = 0; a < 3; ++a) {
        const int bit = (corner >> (2 - a)) & 1;
        c[a] = base[a] + bit;
        w *= bit ? frac[a] : 1.0 - frac[a];
      }
      if (w == 0.0) continue;
      const std::size_t v = spec.Index(c[0], c[1], c[2]);
      weight_sum[v] += w;
      for (int ch = 0; ch < 3; ++ch) data[v * 3 + ch] += w * color[ch];
    }
  }

  auto& occ = grid.occupancy();
  for (std::size_t v = 0; v < weight_sum.size(); ++v) {
    const double w = weight_sum[v];
    if (w == 0.0) continue;
    for (int ch = 0; ch < 3; ++ch) data[v * 3 + ch] /= w;
    occ[v] = std::min(1.0, w);
  }
  return grid;
}

GridSample trilinear_sample(const VoxelGrid& grid, const Eigen::Vector3d& world_point) {
  GridSample s;
  s.feature.assign(static_cast<std::size_t>(grid.channels()), 0.0);
  s.weight = SampleLattice(grid, grid.spec().ToLattice(world_point), s.feature.data());
  return s;
}

VoxelGrid warp_grid(const VoxelGrid& src, const RigidPose& src_to_dst, const GridSpec& dst_spec) {
  VoxelGrid dst(dst_spec, src.channels());
  const GridSpec& sspec = src.spec();
  const RigidPose dst_to_src = invert_pose(src_to_dst);

  // Destination lattice index -> source lattice coordinate is affine.
  const Eigen::Matrix3d a = dst_to_src.rotation * (dst_spec.voxel_size / sspec.voxel_size);
  const Eigen::Vector3d b =
      (dst_to_src.rotation * dst_spec.origin + dst_to_src.translation - sspec.origin) /
      sspec.voxel_size;

  const auto channels = static_cast<std::size_t>(src.channels());
  auto& data = dst.data();
  auto& occ = dst.occupancy();
  for (std::size_t v = 0; v < dst_spec.num_voxels(); ++v) {
    const auto ijk = dst_spec.Coords(v);
    const Eigen::Vector3d q = a * Eigen::Vector3d(ijk[0], ijk[1], ijk[2]) + b;
    occ[v] = SampleLattice(src, q, data.data() + v * channels);
  }
  return dst;
}

VoxelMask covisibility_mask(const GridSpec& spec, const DepthImage& depth_a,
                            const RigidPose& pose_a, const DepthImage& depth_b,
                            const RigidPose& pose_b, const CameraIntrinsics& k) {
  spec.Validate();
  CheckImageMatches(depth_a.width, depth_a.height, k, "depth image A");
  CheckImageMatches(depth_b.width, depth_b.height, k, "depth image B");
  const RigidPose world_to_a = invert_pose(pose_a);
  const RigidPose world_to_b = invert_pose(pose_b);
  const double band = 0.5 * spec.voxel_size;

  auto near_surface = [&](const DepthImage& depth, const RigidPose& world_to_cam,
                          const Eigen::Vector3d& x) {
    const Eigen::Vector3d p = world_to_cam.Apply(x);
    if (!(p.z() > 0.0)) return false;
    const long u = std::lround(k.fx * p.x() / p.z() + k.cx);
    const long v = std::lround(k.fy * p.y() / p.z() + k.cy);
    if (u < 0 || u >= k.width || v < 0 || v >= k.height) return false;
    const double observed = depth.at(static_cast<int>(u), static_cast<int>(v));
    if (observed == kNoHitDepth) return false;
    return std::abs(p.z() - observed) <= band;
  };

  VoxelMask mask(spec.num_voxels(), 0);
  for (std::size_t v = 0; v < mask.size(); ++v) {
    const auto ijk = spec.Coords(v);
    const Eigen::Vector3d x = spec.Center(ijk[0], ijk[1], ijk[2]);
    mask[v] = near_surface(depth_a, world_to_a, x) && near_surface(depth_b, world_to_b, x);
  }
  return mask;
}

GridSpec default_grid_spec(std::span<const UnprojectedPoint> points, int dims, double margin) {
  if (points.empty()) throw InputError("cannot place a grid around an empty point cloud");
  if (dims < 1) throw InputError("grid dims must be >= 1");
  if (!(margin > 0.0)) throw InputError("grid margin must be positive");

  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector3d hi = -lo;
  for (const auto& p : points) {
    mean += p.point;
    lo = lo.cwiseMin(p.point);
    hi = hi.cwiseMax(p.point);
  }
  mean /= static_cast<double>(points.size());
  const double half = std::max((hi - mean).maxCoeff(), (mean - lo).maxCoeff());

  GridSpec spec;
  spec.dims = {dims, dims, dims};
  spec.voxel_size = (half > 0.0 && dims > 1) ? 2.0 * half * margin / (dims - 1) : 1.0;
  spec.origin = mean - Eigen::Vector3d::Constant(0.5 * (dims - 1) * spec.voxel_size);
  return spec;
}

}  // namespace geovoxel
