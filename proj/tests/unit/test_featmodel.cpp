#include <cmath>
#include <numeric>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "geovoxel/error.hpp"
#include "geovoxel/featmodel.hpp"
#include "geovoxel/random.hpp"
#include "geovoxel/scene.hpp"

namespace gv = geovoxel;

namespace {

gv::GridSpec Cube(int d) {
  gv::GridSpec s;
  s.dims = {d, d, d};
  s.voxel_size = 0.5;
  return s;
}

gv::VoxelGrid RandomGrid(int d, int channels, gv::Rng& rng, double empty_fraction = 0.3) {
  gv::VoxelGrid g(Cube(d), channels);
  for (std::size_t v = 0; v < g.num_voxels(); ++v) {
    if (rng.Uniform() < empty_fraction) continue;
    g.occupancy()[v] = rng.Uniform(0.1, 1.0);
    for (double& x : g.feature(v)) x = rng.Uniform();
  }
  return g;
}

gv::EncoderParams RandomParams(const std::vector<std::tuple<int, int, int, gv::Activation>>& arch,
                               gv::Rng& rng) {
  gv::EncoderParams p;
  for (const auto& [k, cin, cout, act] : arch) {
    gv::ConvLayer layer(k, cin, cout, act);
    for (double& w : layer.weights) w = rng.Normal() * 0.5;
    for (double& b : layer.bias) b = rng.Normal() * 0.1;
    p.layers.push_back(std::move(layer));
  }
  return p;
}

// Direct 3D convolution with zero padding: loops over output voxel,
// output channel, kernel offsets and input channel.
std::vector<double> NaiveConv(const gv::VoxelGrid& in, const gv::ConvLayer& layer) {
  const auto& dims = in.spec().dims;
  const int r = layer.kernel / 2;
  std::vector<double> out(in.num_voxels() * static_cast<std::size_t>(layer.out_channels), 0.0);
  for (int i = 0; i < dims[0]; ++i)
    for (int j = 0; j < dims[1]; ++j)
      for (int k = 0; k < dims[2]; ++k)
        for (int co = 0; co < layer.out_channels; ++co) {
          double acc = layer.bias[static_cast<std::size_t>(co)];
          for (int dx = 0; dx < layer.kernel; ++dx)
            for (int dy = 0; dy < layer.kernel; ++dy)
              for (int dz = 0; dz < layer.kernel; ++dz) {
                const int x = i + dx - r, y = j + dy - r, z = k + dz - r;
                if (x < 0 || y < 0 || z < 0 || x >= dims[0] || y >= dims[1] || z >= dims[2]) continue;
                for (int ci = 0; ci < layer.in_channels; ++ci) {
                  acc += layer.weights[layer.weight_index(dx, dy, dz, ci, co)] *
                         in.feature(in.spec().Index(x, y, z))[static_cast<std::size_t>(ci)];
                }
              }
          if (layer.activation == gv::Activation::kRelu) acc = std::max(acc, 0.0);
          out[in.spec().Index(i, j, k) * static_cast<std::size_t>(layer.out_channels) +
              static_cast<std::size_t>(co)] = acc;
        }
  return out;
}

double MaxRelError(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::max(std::abs(analytic), std::abs(numeric)));
}

gv::FeatureGrid RandomUnitFeatures(int d, int channels, gv::Rng& rng) {
  gv::FeatureGrid g(Cube(d), channels);
  for (std::size_t v = 0; v < g.num_voxels(); ++v) {
    g.occupancy()[v] = 1.0;
    double n = 0.0;
    for (double& x : g.feature(v)) {
      x = rng.Normal();
      n += x * x;
    }
    for (double& x : g.feature(v)) x /= std::sqrt(n);
  }
  return g;
}

gv::VoxelMask RandomMask(std::size_t n, double p, gv::Rng& rng) {
  gv::VoxelMask m(n, 0);
  for (auto& x : m) x = rng.Uniform() < p ? 1 : 0;
  return m;
}

}  // namespace

// ---- encoder forward ----

TEST(Encoder, DefaultArchitecture) {
  const auto p = gv::EncoderParams::Default(1);
  ASSERT_EQ(p.layers.size(), 2u);
  EXPECT_EQ(p.layers[0].kernel, 3);
  EXPECT_EQ(p.layers[0].in_channels, 3);
  EXPECT_EQ(p.layers[0].out_channels, 16);
  EXPECT_EQ(p.layers[0].activation, gv::Activation::kRelu);
  EXPECT_EQ(p.layers[1].kernel, 1);
  EXPECT_EQ(p.layers[1].out_channels, 32);
  EXPECT_EQ(p.layers[1].activation, gv::Activation::kNone);
  EXPECT_EQ(p.num_parameters(), 27u * 3 * 16 + 16 + 16 * 32 + 32);
  for (double b : p.layers[0].bias) EXPECT_EQ(b, 0.0);
  EXPECT_NO_THROW(p.Validate());
}

TEST(Encoder, ValidateRejectsBrokenChains) {
  gv::Rng rng(1);
  auto p = RandomParams({{3, 3, 4, gv::Activation::kRelu}, {1, 5, 2, gv::Activation::kNone}}, rng);
  EXPECT_THROW(p.Validate(), gv::InputError);
  auto q = RandomParams({{3, 3, 4, gv::Activation::kRelu}}, rng);
  q.layers[0].weights[0] = std::nan("");
  EXPECT_THROW(q.Validate(), gv::InputError);
}

TEST(Encoder, IdentityKernelGivesNormalizedInput) {
  gv::Rng rng(2);
  const auto grid = RandomGrid(4, 3, rng);
  gv::EncoderParams p;
  gv::ConvLayer id(1, 3, 3, gv::Activation::kNone);
  for (int c = 0; c < 3; ++c) id.weights[id.weight_index(0, 0, 0, c, c)] = 1.0;
  p.layers.push_back(id);
  const auto out = gv::encoder_forward(grid, p);
  for (std::size_t v = 0; v < grid.num_voxels(); ++v) {
    const auto f = grid.feature(v);
    const double n = std::sqrt(f[0] * f[0] + f[1] * f[1] + f[2] * f[2]);
    for (std::size_t c = 0; c < 3; ++c) {
      const double expected = grid.occupancy()[v] > 0 ? f[c] / n : 0.0;
      EXPECT_NEAR(out.feature(v)[c], expected, 1e-12);
    }
  }
}

TEST(Encoder, MatchesDirectConvolution) {
  gv::Rng rng(3);
  const auto grid = RandomGrid(5, 3, rng, 0.0);
  const auto p = RandomParams({{3, 3, 4, gv::Activation::kNone}}, rng);
  const auto naive = NaiveConv(grid, p.layers[0]);
  const auto tape = gv::EncoderTape::Full(grid, p);
  const auto pre = tape.LayerActivation(0);
  for (std::size_t i = 0; i < naive.size(); ++i) EXPECT_NEAR(pre.data()[i], naive[i], 1e-10);
  const auto out = gv::encoder_forward(grid, p);
  for (std::size_t v = 0; v < grid.num_voxels(); ++v) {
    double n = 0.0;
    for (std::size_t c = 0; c < 4; ++c) n += naive[v * 4 + c] * naive[v * 4 + c];
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(out.feature(v)[c], naive[v * 4 + c] / std::sqrt(n), 1e-10);
  }
}

TEST(Encoder, TwoLayerStackMatchesDirectConvolution) {
  gv::Rng rng(4);
  const auto grid = RandomGrid(5, 3, rng);
  const auto p = gv::EncoderParams::Default(9);
  const auto h1 = NaiveConv(grid, p.layers[0]);
  gv::VoxelGrid mid(grid.spec(), 16);
  mid.data() = h1;
  const auto h2 = NaiveConv(mid, p.layers[1]);
  const auto out = gv::encoder_forward(grid, p);
  for (std::size_t v = 0; v < grid.num_voxels(); ++v) {
    if (grid.occupancy()[v] == 0.0) {
      for (double x : out.feature(v)) EXPECT_EQ(x, 0.0);
      continue;
    }
    double n = 0.0;
    for (std::size_t c = 0; c < 32; ++c) n += h2[v * 32 + c] * h2[v * 32 + c];
    for (std::size_t c = 0; c < 32; ++c) EXPECT_NEAR(out.feature(v)[c], h2[v * 32 + c] / std::sqrt(n), 1e-10);
  }
}

TEST(Encoder, OutputHasUnitNormWhereOccupied) {
  const auto pair = gv::render_pair(gv::synth_scene(3, gv::SceneSpec{}));
  const auto grids = gv::prepare_pair(pair, 32);
  const auto out = gv::encoder_forward(grids.b, gv::EncoderParams::Default(2));
  int occupied = 0;
  for (std::size_t v = 0; v < out.num_voxels(); ++v) {
    double n = 0.0;
    for (double x : out.feature(v)) n += x * x;
    if (grids.b.occupancy()[v] > 0.0) {
      ++occupied;
      EXPECT_NEAR(std::sqrt(n), 1.0, 1e-6);
    } else {
      EXPECT_EQ(n, 0.0);
    }
    EXPECT_EQ(out.occupancy()[v], grids.b.occupancy()[v]);
  }
  EXPECT_GT(occupied, 100);
}

TEST(Encoder, SparseSitesMatchFullForward) {
  gv::Rng rng(5);
  const auto grid = RandomGrid(7, 3, rng);
  const auto p = gv::EncoderParams::Default(5);
  const auto full = gv::encoder_forward(grid, p);
  std::vector<std::size_t> sites;
  for (std::size_t v = 0; v < grid.num_voxels(); v += 5) sites.push_back(v);
  const gv::EncoderTape tape(grid, p, sites);
  const auto sparse = tape.Output();
  for (std::size_t v : sites) {
    for (std::size_t c = 0; c < 32; ++c) EXPECT_EQ(sparse.feature(v)[c], full.feature(v)[c]);
  }
}

TEST(Encoder, ChannelMismatchThrows) {
  gv::Rng rng(6);
  const auto grid = RandomGrid(3, 2, rng);
  EXPECT_THROW(gv::encoder_forward(grid, gv::EncoderParams::Default(1)), gv::InputError);
}

// ---- encoder backward ----

TEST(EncoderBackward, LinearPointwiseLayerByHand) {
  // h = W x + b at each voxel, y = h / |h|. For upstream g the gradient at
  // h is (g - y (y.g)) / |h|, so dL/dW[ci][co] = sum_v x_v[ci] gh_v[co].
  gv::Rng rng(7);
  const auto grid = RandomGrid(3, 2, rng, 0.0);
  const auto p = RandomParams({{1, 2, 3, gv::Activation::kNone}}, rng);
  std::vector<double> g(grid.num_voxels() * 3);
  for (double& x : g) x = rng.Normal();
  const auto grads = gv::encoder_backward(grid, p, g);

  Eigen::Matrix<double, 2, 3> dw = Eigen::Matrix<double, 2, 3>::Zero();
  Eigen::Vector3d db = Eigen::Vector3d::Zero();
  const auto& L = p.layers[0];
  for (std::size_t v = 0; v < grid.num_voxels(); ++v) {
    const Eigen::Vector2d x(grid.feature(v)[0], grid.feature(v)[1]);
    Eigen::Vector3d h;
    for (int co = 0; co < 3; ++co) {
      h[co] = L.bias[static_cast<std::size_t>(co)];
      for (int ci = 0; ci < 2; ++ci) h[co] += L.weights[L.weight_index(0, 0, 0, ci, co)] * x[ci];
    }
    const Eigen::Vector3d y = h / h.norm();
    const Eigen::Vector3d gv3(g[v * 3], g[v * 3 + 1], g[v * 3 + 2]);
    const Eigen::Vector3d gh = (gv3 - y * y.dot(gv3)) / h.norm();
    dw += x * gh.transpose();
    db += gh;
  }
  for (int ci = 0; ci < 2; ++ci)
    for (int co = 0; co < 3; ++co)
      EXPECT_NEAR(grads.params.layers[0].weights[L.weight_index(0, 0, 0, ci, co)], dw(ci, co), 1e-12);
  for (int co = 0; co < 3; ++co) EXPECT_NEAR(grads.params.layers[0].bias[static_cast<std::size_t>(co)], db[co], 1e-12);
}

TEST(EncoderBackward, MatchesFiniteDifferences) {
  gv::Rng rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    const auto grid = RandomGrid(4, 3, rng);
    auto p = RandomParams({{3, 3, 4, gv::Activation::kRelu}, {1, 4, 5, gv::Activation::kNone}}, rng);
    std::vector<double> g(grid.num_voxels() * 5);
    for (double& x : g) x = rng.Normal();
    auto objective = [&](const gv::EncoderParams& q, const gv::VoxelGrid& in) {
      const auto out = gv::encoder_forward(in, q);
      return std::inner_product(out.data().begin(), out.data().end(), g.begin(), 0.0);
    };
    const auto grads = gv::encoder_backward(grid, p, g);
    const auto flat = p.Flatten();
    const auto gflat = grads.params.Flatten();
    const double h = 1e-5;
    for (std::size_t i = 0; i < flat.size(); i += 7) {
      auto up = flat, down = flat;
      up[i] += h;
      down[i] -= h;
      gv::EncoderParams pu = p, pd = p;
      pu.Unflatten(up);
      pd.Unflatten(down);
      const double numeric = (objective(pu, grid) - objective(pd, grid)) / (2 * h);
      EXPECT_LT(MaxRelError(gflat[i], numeric), 1e-4) << "param " << i;
    }
    for (std::size_t i = 0; i < grid.data().size(); i += 11) {
      auto up = grid, down = grid;
      up.data()[i] += h;
      down.data()[i] -= h;
      const double numeric = (objective(p, up) - objective(p, down)) / (2 * h);
      EXPECT_LT(MaxRelError(grads.input[i], numeric), 1e-4) << "input " << i;
    }
  }
}

TEST(EncoderBackward, FlattenRoundTrip) {
  const auto p = gv::EncoderParams::Default(4);
  auto q = p.ZerosLike();
  EXPECT_EQ(q.num_parameters(), p.num_parameters());
  q.Unflatten(p.Flatten());
  EXPECT_EQ(q.Flatten(), p.Flatten());
  EXPECT_THROW(q.Unflatten(std::vector<double>(3)), gv::InputError);
}

// ---- contrastive loss ----

TEST(Contrastive, IdenticalFeaturesGiveLogOnePlusN) {
  gv::FeatureGrid a(Cube(4), 3);
  for (std::size_t v = 0; v < a.num_voxels(); ++v) {
    a.occupancy()[v] = 1.0;
    a.feature(v)[1] = 1.0;
  }
  gv::VoxelMask mask(a.num_voxels(), 1);
  gv::ContrastiveConfig cfg;
  cfg.negatives_per_anchor = 10;
  const auto r = gv::view_contrastive_loss(a, a, mask, cfg);
  EXPECT_NEAR(r.loss, std::log(11.0), 1e-12);
  EXPECT_EQ(r.num_anchors, a.num_voxels());
}

TEST(Contrastive, OrthogonalNegativesClosedForm) {
  // Anchor equals positive; all other masked voxels orthogonal to it.
  const int n = 5;
  gv::FeatureGrid a(Cube(2), 8);
  gv::VoxelMask mask(a.num_voxels(), 0);
  for (int i = 0; i <= n; ++i) {
    mask[static_cast<std::size_t>(i)] = 1;
    a.feature(static_cast<std::size_t>(i))[static_cast<std::size_t>(i)] = 1.0;
    a.occupancy()[static_cast<std::size_t>(i)] = 1.0;
  }
  gv::ContrastiveConfig cfg;
  cfg.temperature = 1.0;
  cfg.negatives_per_anchor = n;
  const auto r = gv::view_contrastive_loss(a, a, mask, cfg);
  EXPECT_NEAR(r.loss, -std::log(std::exp(1.0) / (std::exp(1.0) + n)), 1e-12);
}

TEST(Contrastive, EmptyMaskThrows) {
  gv::Rng rng(9);
  const auto a = RandomUnitFeatures(3, 4, rng);
  gv::VoxelMask mask(a.num_voxels(), 0);
  EXPECT_THROW(gv::view_contrastive_loss(a, a, mask, gv::ContrastiveConfig{}), gv::NoCorrespondencesError);
}

TEST(Contrastive, GradientsMatchFiniteDifferences) {
  gv::Rng rng(10);
  for (int trial = 0; trial < 5; ++trial) {
    const auto a = RandomUnitFeatures(3, 4, rng);
    const auto b = RandomUnitFeatures(3, 4, rng);
    const auto mask = RandomMask(a.num_voxels(), 0.6, rng);
    gv::ContrastiveConfig cfg;
    cfg.temperature = 0.5;
    cfg.negatives_per_anchor = 6;
    cfg.seed = 100 + static_cast<std::uint64_t>(trial);
    const auto r = gv::view_contrastive_loss(a, b, mask, cfg);
    const double h = 1e-5;
    for (std::size_t i = 0; i < a.data().size(); ++i) {
      auto up = a, down = a;
      up.data()[i] += h;
      down.data()[i] -= h;
      const double numeric = (gv::view_contrastive_loss(up, b, mask, cfg).loss -
                              gv::view_contrastive_loss(down, b, mask, cfg).loss) / (2 * h);
      EXPECT_LT(MaxRelError(r.grad_a[i], numeric), 1e-4);
      auto bu = b, bd = b;
      bu.data()[i] += h;
      bd.data()[i] -= h;
      const double numeric_b = (gv::view_contrastive_loss(a, bu, mask, cfg).loss -
                                gv::view_contrastive_loss(a, bd, mask, cfg).loss) / (2 * h);
      EXPECT_LT(MaxRelError(r.grad_b[i], numeric_b), 1e-4);
    }
  }
}

TEST(Contrastive, InvariantUnderCommonRotation) {
  gv::Rng rng(11);
  const auto a = RandomUnitFeatures(3, 3, rng);
  const auto b = RandomUnitFeatures(3, 3, rng);
  const auto mask = RandomMask(a.num_voxels(), 0.7, rng);
  const Eigen::Matrix3d rot =
      Eigen::AngleAxisd(0.8, Eigen::Vector3d(1, -2, 0.5).normalized()).toRotationMatrix();
  auto rotate = [&](gv::FeatureGrid g) {
    for (std::size_t v = 0; v < g.num_voxels(); ++v) {
      auto f = g.feature(v);
      const Eigen::Vector3d x = rot * Eigen::Vector3d(f[0], f[1], f[2]);
      for (int c = 0; c < 3; ++c) f[static_cast<std::size_t>(c)] = x[c];
    }
    return g;
  };
  const gv::ContrastiveConfig cfg;
  const double l0 = gv::view_contrastive_loss(a, b, mask, cfg).loss;
  const double l1 = gv::view_contrastive_loss(rotate(a), rotate(b), mask, cfg).loss;
  EXPECT_NEAR(l0, l1, 1e-9);
  EXPECT_GT(l0, 0.0);
}

TEST(Contrastive, SmallGradientStepDecreasesLoss) {
  gv::Rng rng(12);
  const auto a = RandomUnitFeatures(4, 4, rng);
  const auto b = RandomUnitFeatures(4, 4, rng);
  const auto mask = RandomMask(a.num_voxels(), 0.5, rng);
  const gv::ContrastiveConfig cfg;
  const auto r = gv::view_contrastive_loss(a, b, mask, cfg);
  auto a2 = a;
  auto b2 = b;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    a2.data()[i] -= 1e-4 * r.grad_a[i];
    b2.data()[i] -= 1e-4 * r.grad_b[i];
  }
  EXPECT_LT(gv::view_contrastive_loss(a2, b2, mask, cfg).loss, r.loss);
}

TEST(Contrastive, SeedDeterminesNegatives) {
  gv::Rng rng(13);
  const auto a = RandomUnitFeatures(4, 4, rng);
  const auto b = RandomUnitFeatures(4, 4, rng);
  const auto mask = RandomMask(a.num_voxels(), 0.5, rng);
  gv::ContrastiveConfig cfg;
  cfg.negatives_per_anchor = 4;
  const double l1 = gv::view_contrastive_loss(a, b, mask, cfg).loss;
  EXPECT_EQ(l1, gv::view_contrastive_loss(a, b, mask, cfg).loss);
  cfg.seed = 99;
  EXPECT_NE(l1, gv::view_contrastive_loss(a, b, mask, cfg).loss);
}

// ---- retrieval ----

TEST(Retrieval, IdenticalDistinctFeaturesArePerfect) {
  gv::Rng rng(14);
  const auto a = RandomUnitFeatures(4, 6, rng);
  const auto mask = RandomMask(a.num_voxels(), 0.5, rng);
  EXPECT_EQ(gv::retrieval_accuracy(a, a, mask), 1.0);
}

TEST(Retrieval, AllIdenticalFeaturesScoreZero) {
  gv::FeatureGrid a(Cube(3), 2);
  for (std::size_t v = 0; v < a.num_voxels(); ++v) a.feature(v)[0] = 1.0;
  gv::VoxelMask mask(a.num_voxels(), 1);
  EXPECT_EQ(gv::retrieval_accuracy(a, a, mask), 0.0);
}

TEST(Retrieval, RandomFeaturesAreAtChance) {
  gv::Rng rng(15);
  const int m = 10;
  const int trials = 4000;
  double sum = 0.0;
  for (int t = 0; t < trials; ++t) {
    const auto a = RandomUnitFeatures(3, 4, rng);
    const auto b = RandomUnitFeatures(3, 4, rng);
    gv::VoxelMask mask(a.num_voxels(), 0);
    for (int i = 0; i < m; ++i) mask[static_cast<std::size_t>(2 * i)] = 1;
    sum += gv::retrieval_accuracy(a, b, mask);
  }
  const double mean = sum / trials;
  // Each trial averages m Bernoulli(1/m) outcomes.
  const double se = std::sqrt((1.0 / m) * (1.0 - 1.0 / m) / (m * trials));
  EXPECT_NEAR(mean, 1.0 / m, 3 * se);
}

TEST(Retrieval, NeedsTwoVoxels) {
  gv::Rng rng(16);
  const auto a = RandomUnitFeatures(3, 4, rng);
  gv::VoxelMask mask(a.num_voxels(), 0);
  mask[4] = 1;
  EXPECT_THROW(gv::retrieval_accuracy(a, a, mask), gv::InputError);
}

// ---- training ----

namespace {

std::vector<gv::PairGrids> SmallPairs(int count, std::uint64_t base) {
  gv::SceneSpec spec;
  spec.image_width = spec.image_height = 48;
  std::vector<gv::PairGrids> out;
  for (int i = 0; i < count; ++i) {
    out.push_back(gv::prepare_pair(gv::render_pair(gv::synth_scene(base + static_cast<std::uint64_t>(i), spec)), 12));
  }
  return out;
}

}  // namespace

TEST(Training, ZeroLearningRateFreezesParameters) {
  const auto pairs = SmallPairs(3, 40);
  const auto p0 = gv::EncoderParams::Default(3);
  gv::ContrastiveConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.epochs = 3;
  const auto r = gv::train_on_grids(pairs, p0, cfg);
  EXPECT_EQ(r.params.Flatten(), p0.Flatten());
  ASSERT_EQ(r.loss_curve.size(), 3u);
  EXPECT_EQ(r.loss_curve[0], r.loss_curve[1]);
  EXPECT_EQ(r.loss_curve[1], r.loss_curve[2]);
}

TEST(Training, ZeroEpochsIsNoOp) {
  std::vector<gv::ScenePair> pairs{gv::render_pair(gv::synth_scene(1, gv::SceneSpec{}))};
  const auto p0 = gv::EncoderParams::Default(3);
  gv::ContrastiveConfig cfg;
  cfg.epochs = 0;
  const auto r = gv::train_view_prediction(pairs, p0, cfg);
  EXPECT_EQ(r.params.Flatten(), p0.Flatten());
  EXPECT_TRUE(r.loss_curve.empty());
}

TEST(Training, DeterministicAndDecreasing) {
  const auto pairs = SmallPairs(5, 50);
  const auto p0 = gv::EncoderParams::Default(4);
  gv::ContrastiveConfig cfg;
  cfg.epochs = 10;
  cfg.learning_rate = 0.02;  // masks here hold only 10-30 voxels
  const auto r1 = gv::train_on_grids(pairs, p0, cfg);
  const auto r2 = gv::train_on_grids(pairs, p0, cfg);
  EXPECT_EQ(r1.loss_curve, r2.loss_curve);
  EXPECT_EQ(r1.params.Flatten(), r2.params.Flatten());
  EXPECT_LT(r1.loss_curve.back(), r1.loss_curve.front());
}

TEST(Training, EmptyPairsAreSkippedAndCounted) {
  auto pairs = SmallPairs(2, 60);
  gv::PairGrids empty = pairs[0];
  std::fill(empty.mask.begin(), empty.mask.end(), 0);
  empty.mask_count = 0;
  pairs.push_back(empty);
  gv::ContrastiveConfig cfg;
  cfg.epochs = 1;
  const auto r = gv::train_on_grids(pairs, gv::EncoderParams::Default(1), cfg);
  EXPECT_EQ(r.skipped_pairs, 1u);
  std::vector<gv::PairGrids> only_empty{empty};
  EXPECT_THROW(gv::train_on_grids(only_empty, gv::EncoderParams::Default(1), cfg), gv::NoCorrespondencesError);
}
