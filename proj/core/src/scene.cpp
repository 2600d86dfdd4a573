#include "geovoxel/scene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "geovoxel/error.hpp"
#include "geovoxel/random.hpp"

namespace geovoxel {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Smallest positive ray parameter of a sphere hit, or +inf.
double IntersectSphere(const Eigen::Vector3d& o, const Eigen::Vector3d& d, const Sphere& s) {
  const Eigen::Vector3d oc = o - s.center;
  const double a = d.squaredNorm();
  const double b = oc.dot(d);
  const double c = oc.squaredNorm() - s.radius * s.radius;
  const double disc = b * b - a * c;
  if (disc < 0.0) return kInf;
  const double root = std::sqrt(disc);
  const double t0 = (-b - root) / a;
  if (t0 > 0.0) return t0;
  const double t1 = (-b + root) / a;
  return t1 > 0.0 ? t1 : kInf;
}

// Slab test; returns the exit point when the origin is inside the box.
double IntersectBox(const Eigen::Vector3d& o, const Eigen::Vector3d& d, const Box& box) {
  double t_near = -kInf;
  double t_far = kInf;
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) {
      if (o[a] < box.min[a] || o[a] > box.max[a]) return kInf;
      continue;
    }
    double t1 = (box.min[a] - o[a]) / d[a];
    double t2 = (box.max[a] - o[a]) / d[a];
    if (t1 > t2) std::swap(t1, t2);
    t_near = std::max(t_near, t1);
    t_far = std::min(t_far, t2);
  }
  if (t_near > t_far || t_far <= 0.0) return kInf;
  return t_near > 0.0 ? t_near : t_far;
}

SurfaceColor RandomColor(Rng& rng, const SceneSpec& spec) {
  SurfaceColor color;
  for (int c = 0; c < 3; ++c) color.base[c] = rng.Uniform(0.15, 0.85);
  color.amplitude = spec.texture_amplitude;
  for (std::size_t w = 0; w < color.wave_vectors.size(); ++w) {
    Eigen::Vector3d dir(rng.Normal(), rng.Normal(), rng.Normal());
    if (dir.norm() == 0.0) dir = Eigen::Vector3d::UnitX();
    color.wave_vectors[w] = dir.normalized() * spec.texture_frequency * rng.Uniform(0.5, 1.5);
    color.phases[w] = rng.Uniform(0.0, 2.0 * M_PI);
  }
  return color;
}

}  // namespace

Eigen::Vector3d SurfaceColor::At(const Eigen::Vector3d& world) const {
  Eigen::Vector3d c = base;
  if (amplitude != 0.0) {
    for (int ch = 0; ch < 3; ++ch) {
      double wave = 0.0;
      for (int w = 0; w < 6; ++w) {
        const std::size_t i = static_cast<std::size_t>(6 * ch + w);
        wave += std::sin(wave_vectors[i].dot(world) + phases[i]);
      }
      c[ch] = (1.0 - amplitude) * c[ch] + amplitude * (0.5 + wave / 12.0);
    }
  }
  return c;
}

void SyntheticScene::Validate() const {
  for (const auto& s : spheres) {
    if (!(s.radius > 0.0)) throw InputError("sphere radius must be positive");
  }
  for (const auto& b : boxes) {
    if (!(b.min.array() < b.max.array()).all()) {
      throw InputError("box min corner must be below max corner on every axis");
    }
  }
  for (const auto& cam : cameras) {
    cam.intrinsics.Validate();
    if (!cam.cam_to_world.IsValid()) throw InputError("camera pose is not a rigid transform");
  }
}

RenderedView render_depth(const SyntheticScene& scene, const Camera& camera) {
  const CameraIntrinsics& k = camera.intrinsics;
  RenderedView view{DepthImage(k.width, k.height), RgbImage(k.width, k.height)};
  const Eigen::Vector3d origin = camera.cam_to_world.translation;
  const Eigen::Matrix3d& rot = camera.cam_to_world.rotation;

  for (int v = 0; v < k.height; ++v) {
    for (int u = 0; u < k.width; ++u) {
      // Unit z component in the camera frame, so the ray parameter is depth.
      const Eigen::Vector3d dir = rot * Eigen::Vector3d((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
      double best = kInf;
      const SurfaceColor* color = nullptr;
      for (const auto& s : scene.spheres) {
        const double t = IntersectSphere(origin, dir, s);
        if (t < best) {
          best = t;
          color = &s.color;
        }
      }
      for (const auto& b : scene.boxes) {
        const double t = IntersectBox(origin, dir, b);
        if (t < best) {
          best = t;
          color = &b.color;
        }
      }
      if (color == nullptr) continue;
      view.depth.at(u, v) = best;
      const Eigen::Vector3d c = color->At(origin + best * dir);
      auto px = view.rgb.at(u, v);
      for (int ch = 0; ch < 3; ++ch) px[ch] = c[ch];
    }
  }
  return view;
}

SyntheticScene synth_scene(std::uint64_t seed, const SceneSpec& spec) {
  if (spec.num_spheres < 0 || spec.num_boxes < 0) throw InputError("object counts must be >= 0");
  Rng rng(seed);
  SyntheticScene scene;

  auto random_center = [&] {
    return Eigen::Vector3d(rng.Uniform(-spec.lateral_extent, spec.lateral_extent),
                           rng.Uniform(-spec.lateral_extent, spec.lateral_extent),
                           rng.Uniform(spec.min_distance, spec.max_distance));
  };
  for (int i = 0; i < spec.num_spheres; ++i) {
    Sphere s;
    s.center = random_center();
    s.radius = rng.Uniform(spec.min_size, spec.max_size);
    s.color = RandomColor(rng, spec);
    scene.spheres.push_back(s);
  }
  for (int i = 0; i < spec.num_boxes; ++i) {
    Box b;
    const Eigen::Vector3d c = random_center();
    const Eigen::Vector3d half(rng.Uniform(spec.min_size, spec.max_size),
                               rng.Uniform(spec.min_size, spec.max_size),
                               rng.Uniform(spec.min_size, spec.max_size));
    b.min = c - half;
    b.max = c + half;
    b.color = RandomColor(rng, spec);
    scene.boxes.push_back(b);
  }

  const CameraIntrinsics k =
      CameraIntrinsics::FromHorizontalFov(spec.image_width, spec.image_height, spec.hfov_degrees);
  scene.cameras[0] = {k, RigidPose::Identity()};

  Eigen::Vector3d axis(rng.Normal(), rng.Normal(), rng.Normal());
  if (axis.norm() == 0.0) axis = Eigen::Vector3d::UnitY();
  const double angle =
      rng.Uniform(-spec.max_rotation_degrees, spec.max_rotation_degrees) * M_PI / 180.0;
  const Eigen::Vector3d shift(rng.Uniform(-spec.max_translation, spec.max_translation),
                              rng.Uniform(-spec.max_translation, spec.max_translation),
                              rng.Uniform(-spec.max_translation, spec.max_translation));
  const RigidPose delta = RigidPose::FromAxisAngle(axis, angle, shift);
  scene.cameras[1] = {k, compose_pose(scene.cameras[0].cam_to_world, delta)};
  return scene;
}

ScenePair render_pair(const SyntheticScene& scene) {
  auto a = render_depth(scene, scene.cameras[0]);
  auto b = render_depth(scene, scene.cameras[1]);
  return ScenePair{std::move(a.rgb),  std::move(a.depth), scene.cameras[0].cam_to_world,
                   std::move(b.rgb),  std::move(b.depth), scene.cameras[1].cam_to_world,
                   scene.cameras[0].intrinsics};
}

}  // namespace geovoxel
