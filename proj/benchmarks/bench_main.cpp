#include <benchmark/benchmark.h>

#include "geovoxel/encoding.hpp"
#include "geovoxel/featmodel.hpp"
#include "geovoxel/geometry.hpp"
#include "geovoxel/random.hpp"
#include "geovoxel/scene.hpp"

namespace gv = geovoxel;

namespace {

gv::VoxelGrid RandomGrid(int d, int channels, std::uint64_t seed) {
  gv::GridSpec spec;
  spec.dims = {d, d, d};
  spec.voxel_size = 0.1;
  gv::VoxelGrid g(spec, channels);
  gv::Rng rng(seed);
  for (std::size_t v = 0; v < g.num_voxels(); ++v) {
    if (rng.Uniform() < 0.8) continue;
    g.occupancy()[v] = 1.0;
    for (double& x : g.feature(v)) x = rng.Uniform();
  }
  return g;
}

Eigen::MatrixXd RandomMatrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  gv::Rng rng(seed);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.Normal();
  return m;
}

}  // namespace

static void BM_EncoderForward(benchmark::State& state) {
  const auto grid = RandomGrid(static_cast<int>(state.range(0)), 3, 1);
  const auto params = gv::EncoderParams::Default(2);
  for (auto _ : state) benchmark::DoNotOptimize(gv::encoder_forward(grid, params));
}
BENCHMARK(BM_EncoderForward)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

static void BM_RenderAndLift(benchmark::State& state) {
  gv::SceneSpec spec;
  spec.image_width = spec.image_height = static_cast<int>(state.range(0));
  const auto scene = gv::synth_scene(3, spec);
  for (auto _ : state) benchmark::DoNotOptimize(gv::prepare_pair(gv::render_pair(scene), 32));
}
BENCHMARK(BM_RenderAndLift)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

static void BM_WarpGrid(benchmark::State& state) {
  const auto grid = RandomGrid(32, 16, 4);
  const auto pose = gv::RigidPose::FromAxisAngle({0, 1, 0}, 0.1, {0.05, 0, 0});
  for (auto _ : state) benchmark::DoNotOptimize(gv::warp_grid(grid, pose, grid.spec()));
}
BENCHMARK(BM_WarpGrid)->Unit(benchmark::kMillisecond);

static void BM_RidgeCv(benchmark::State& state) {
  const auto x = RandomMatrix(170, state.range(0), 5);
  const auto y = RandomMatrix(170, 50, 6);
  const gv::SplitConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(gv::fit_ridge_cv(x, y, cfg));
}
BENCHMARK(BM_RidgeCv)->Arg(32)->Arg(169)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
