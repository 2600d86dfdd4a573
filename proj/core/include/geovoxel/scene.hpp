#ifndef GEOVOXEL_SCENE_HPP
#define GEOVOXEL_SCENE_HPP

// Synthetic two-view scenes of spheres and boxes, rendered by exact ray
// casting into RGB-D images.

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "geovoxel/featmodel.hpp"
#include "geovoxel/geometry.hpp"

namespace geovoxel {

// Object color: a base color plus an optional smooth procedural pattern
// that is a function of the world-space surface point, so every view sees
// the same color at the same 3D location. Zero amplitude gives a solid
// color.
struct SurfaceColor {
  Eigen::Vector3d base = Eigen::Vector3d::Constant(0.5);
  double amplitude = 0.0;
  // Six plane waves per channel: direction * frequency and phase.
  std::array<Eigen::Vector3d, 18> wave_vectors{};
  std::array<double, 18> phases{};

  Eigen::Vector3d At(const Eigen::Vector3d& world) const;
};

struct Sphere {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  double radius = 1.0;
  SurfaceColor color;
};

struct Box {
  Eigen::Vector3d min = Eigen::Vector3d::Zero();
  Eigen::Vector3d max = Eigen::Vector3d::Ones();
  SurfaceColor color;
};

struct Camera {
  CameraIntrinsics intrinsics;
  RigidPose cam_to_world;
};

struct SyntheticScene {
  std::vector<Sphere> spheres;
  std::vector<Box> boxes;
  std::array<Camera, 2> cameras;

  // Throws InputError when a radius, box or camera is invalid.
  void Validate() const;
};

struct SceneSpec {
  int num_spheres = 3;
  int num_boxes = 2;
  int image_width = 128;
  int image_height = 128;
  double hfov_degrees = 60.0;
  // Object centers are drawn in front of camera A within these ranges.
  double lateral_extent = 1.2;
  double min_distance = 3.0;
  double max_distance = 6.0;
  double min_size = 0.4;
  double max_size = 1.0;
  // Bounds on the random rigid perturbation from camera A to camera B.
  double max_rotation_degrees = 8.0;
  double max_translation = 0.25;
  // Procedural surface pattern; amplitude 0 gives solid colors.
  double texture_amplitude = 1.0;
  double texture_frequency = 9.0;
};

struct RenderedView {
  DepthImage depth;
  RgbImage rgb;
};

// Nearest analytic ray hit per pixel; pixels without a hit get kNoHitDepth
// and black.
RenderedView render_depth(const SyntheticScene& scene, const Camera& camera);

SyntheticScene synth_scene(std::uint64_t seed, const SceneSpec& spec);

// Renders both cameras of a scene into a training pair.
ScenePair render_pair(const SyntheticScene& scene);

}  // namespace geovoxel

#endif  // GEOVOXEL_SCENE_HPP
