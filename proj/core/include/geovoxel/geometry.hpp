#ifndef GEOVOXEL_GEOMETRY_HPP
#define GEOVOXEL_GEOMETRY_HPP

// Pinhole camera math, depth unprojection, voxel lifting and rigid warping
// of voxel feature grids.
//
// Camera convention: +z forward, +x right, +y down. Pixel (u, v) = (0, 0) is
// the top-left pixel; u indexes columns and v indexes rows. A depth value is
// the z coordinate of the surface point in the camera frame, and 0 marks a
// pixel with no surface hit.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace geovoxel {

inline constexpr double kNoHitDepth = 0.0;

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  // Square pixels, principal point at the image center, focal length from
  // the horizontal field of view.
  static CameraIntrinsics FromHorizontalFov(int width, int height, double hfov_degrees = 60.0);

  // Throws InputError when an invariant is violated.
  void Validate() const;
};

// Maps points from a source frame to a target frame: x' = rotation * x + translation.
struct RigidPose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static RigidPose Identity() { return {}; }
  static RigidPose Translation(const Eigen::Vector3d& t);
  static RigidPose FromAxisAngle(const Eigen::Vector3d& axis, double angle_radians,
                                 const Eigen::Vector3d& t = Eigen::Vector3d::Zero());

  Eigen::Vector3d Apply(const Eigen::Vector3d& x) const { return rotation * x + translation; }

  // Orthonormal rotation with determinant +1, finite translation.
  bool IsValid(double tolerance = 1e-6) const;
};

RigidPose invert_pose(const RigidPose& p);

// Returns the pose that applies `b` first and then `a`.
RigidPose compose_pose(const RigidPose& a, const RigidPose& b);

struct GridSpec {
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();  // center of voxel (0,0,0)
  double voxel_size = 1.0;
  std::array<int, 3> dims = {1, 1, 1};

  void Validate() const;

  std::size_t num_voxels() const {
    return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
           static_cast<std::size_t>(dims[2]);
  }
  std::size_t Index(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * static_cast<std::size_t>(dims[1]) +
            static_cast<std::size_t>(j)) *
               static_cast<std::size_t>(dims[2]) +
           static_cast<std::size_t>(k);
  }
  std::array<int, 3> Coords(std::size_t index) const;
  Eigen::Vector3d Center(int i, int j, int k) const {
    return origin + voxel_size * Eigen::Vector3d(i, j, k);
  }
  // Continuous lattice coordinates; voxel centers sit at integer values.
  Eigen::Vector3d ToLattice(const Eigen::Vector3d& world) const {
    return (world - origin) / voxel_size;
  }

  bool operator==(const GridSpec& other) const {
    return origin == other.origin && voxel_size == other.voxel_size && dims == other.dims;
  }
};

// Dense Dx*Dy*Dz*C feature lattice plus an occupancy weight per voxel.
// Features are stored voxel-major: data[Index(i,j,k) * channels + c].
class VoxelGrid {
 public:
  VoxelGrid() = default;
  VoxelGrid(const GridSpec& spec, int channels);

  const GridSpec& spec() const { return spec_; }
  int channels() const { return channels_; }
  std::size_t num_voxels() const { return spec_.num_voxels(); }

  std::span<double> feature(std::size_t voxel) {
    return {data_.data() + voxel * static_cast<std::size_t>(channels_),
            static_cast<std::size_t>(channels_)};
  }
  std::span<const double> feature(std::size_t voxel) const {
    return {data_.data() + voxel * static_cast<std::size_t>(channels_),
            static_cast<std::size_t>(channels_)};
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }
  std::vector<double>& occupancy() { return occupancy_; }
  const std::vector<double>& occupancy() const { return occupancy_; }

 private:
  GridSpec spec_;
  int channels_ = 0;
  std::vector<double> data_;
  std::vector<double> occupancy_;
};

struct DepthImage {
  int width = 0;
  int height = 0;
  std::vector<double> depth;  // row-major, v * width + u

  DepthImage() = default;
  DepthImage(int w, int h, double fill = kNoHitDepth)
      : width(w), height(h), depth(static_cast<std::size_t>(w) * h, fill) {}

  double& at(int u, int v) { return depth[static_cast<std::size_t>(v) * width + u]; }
  double at(int u, int v) const { return depth[static_cast<std::size_t>(v) * width + u]; }
};

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<double> rgb;  // row-major, 3 interleaved channels in [0,1]

  RgbImage() = default;
  RgbImage(int w, int h, double fill = 0.0)
      : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, fill) {}

  std::span<double, 3> at(int u, int v) {
    return std::span<double, 3>(rgb.data() + (static_cast<std::size_t>(v) * width + u) * 3, 3);
  }
  std::span<const double, 3> at(int u, int v) const {
    return std::span<const double, 3>(rgb.data() + (static_cast<std::size_t>(v) * width + u) * 3,
                                      3);
  }
};

struct UnprojectedPoint {
  Eigen::Vector3d point;
  int u = 0;
  int v = 0;
};

// One world-frame point per valid-depth pixel, in row-major pixel order.
std::vector<UnprojectedPoint> unproject_depth(const DepthImage& depth, const CameraIntrinsics& k,
                                              const RigidPose& cam_to_world);

// Splats each unprojected pixel's color into the grid with trilinear
// weights. Points whose lattice coordinates fall outside [0, D-1] on any
// axis are dropped.
VoxelGrid lift_to_grid(const RgbImage& rgb, const DepthImage& depth, const CameraIntrinsics& k,
                       const RigidPose& cam_to_world, const GridSpec& spec);

struct GridSample {
  std::vector<double> feature;
  double weight = 0.0;
};

// Trilinear interpolation of features and occupancy. Lattice corners outside
// the grid contribute zero.
GridSample trilinear_sample(const VoxelGrid& grid, const Eigen::Vector3d& world_point);

// Resamples `src` on `dst_spec`: the destination voxel at world point x takes
// the value of `src` at invert_pose(src_to_dst) * x.
VoxelGrid warp_grid(const VoxelGrid& src, const RigidPose& src_to_dst, const GridSpec& dst_spec);

// One byte per voxel, 1 = true.
using VoxelMask = std::vector<std::uint8_t>;

// Voxels whose centers project inside both images and lie within
// voxel_size / 2 of the surface observed along that pixel in both views.
VoxelMask covisibility_mask(const GridSpec& spec, const DepthImage& depth_a,
                            const RigidPose& pose_a, const DepthImage& depth_b,
                            const RigidPose& pose_b, const CameraIntrinsics& k);

// Axis-aligned grid centered on the mean of `points`, with a voxel size that
// makes the grid cover the point cloud's extent around that mean times
// `margin`.
GridSpec default_grid_spec(std::span<const UnprojectedPoint> points, int dims = 32,
                           double margin = 1.2);

}  // namespace geovoxel

#endif  // GEOVOXEL_GEOMETRY_HPP
