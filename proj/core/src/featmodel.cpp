#include "geovoxel/featmodel.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "geovoxel/error.hpp"
#include "geovoxel/random.hpp"

namespace geovoxel {

namespace {

std::vector<std::size_t> Dilate(const GridSpec& spec, const std::vector<std::size_t>& sites,
                                int radius) {
  if (radius == 0) return sites;
  std::vector<std::uint8_t> marked(spec.num_voxels(), 0);
  for (std::size_t s : sites) {
    const auto c = spec.Coords(s);
    for (int i = std::max(0, c[0] - radius); i <= std::min(spec.dims[0] - 1, c[0] + radius); ++i) {
      for (int j = std::max(0, c[1] - radius); j <= std::min(spec.dims[1] - 1, c[1] + radius);
           ++j) {
        for (int k = std::max(0, c[2] - radius); k <= std::min(spec.dims[2] - 1, c[2] + radius);
             ++k) {
          marked[spec.Index(i, j, k)] = 1;
        }
      }
    }
  }
  std::vector<std::size_t> out;
  for (std::size_t v = 0; v < marked.size(); ++v) {
    if (marked[v]) out.push_back(v);
  }
  return out;
}

// Calls fn(weight_offset, neighbor_voxel) for every in-grid tap of a
// kernel centered on voxel `site`.
template <typename Fn>
void ForEachTap(const GridSpec& spec, const ConvLayer& layer, std::size_t site, Fn&& fn) {
  const int r = layer.kernel / 2;
  const auto c = spec.Coords(site);
  for (int dx = 0; dx < layer.kernel; ++dx) {
    const int i = c[0] + dx - r;
    if (i < 0 || i >= spec.dims[0]) continue;
    for (int dy = 0; dy < layer.kernel; ++dy) {
      const int j = c[1] + dy - r;
      if (j < 0 || j >= spec.dims[1]) continue;
      for (int dz = 0; dz < layer.kernel; ++dz) {
        const int k = c[2] + dz - r;
        if (k < 0 || k >= spec.dims[2]) continue;
        fn(layer.weight_index(dx, dy, dz, 0, 0), spec.Index(i, j, k));
      }
    }
  }
}

}  // namespace

ConvLayer::ConvLayer(int kernel_, int in_channels_, int out_channels_, Activation activation_)
    : kernel(kernel_),
      in_channels(in_channels_),
      out_channels(out_channels_),
      activation(activation_),
      weights(static_cast<std::size_t>(kernel_) * kernel_ * kernel_ * in_channels_ *
                  out_channels_,
              0.0),
      bias(static_cast<std::size_t>(out_channels_), 0.0) {}

EncoderParams EncoderParams::Default(std::uint64_t seed) {
  EncoderParams p;
  p.layers.emplace_back(3, 3, 16, Activation::kRelu);
  p.layers.emplace_back(1, 16, 32, Activation::kNone);
  Rng rng(seed);
  for (auto& layer : p.layers) {
    const double fan_in = static_cast<double>(layer.kernel * layer.kernel * layer.kernel) *
                          layer.in_channels;
    const double gain = layer.activation == Activation::kRelu ? 2.0 : 1.0;
    const double sd = std::sqrt(gain / fan_in);
    for (double& w : layer.weights) w = rng.Normal(0.0, sd);
  }
  return p;
}

void EncoderParams::Validate() const {
  if (layers.empty()) throw InputError("encoder needs at least one layer");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    if (layer.kernel < 1 || layer.kernel % 2 == 0) {
      throw InputError("layer " + std::to_string(l) + ": kernel size must be odd and positive");
    }
    if (layer.in_channels < 1 || layer.out_channels < 1) {
      throw InputError("layer " + std::to_string(l) + ": channel counts must be positive");
    }
    if (l > 0 && layer.in_channels != layers[l - 1].out_channels) {
      throw InputError("layer " + std::to_string(l) + ": expects " +
                       std::to_string(layer.in_channels) + " input channels, previous layer has " +
                       std::to_string(layers[l - 1].out_channels));
    }
    const std::size_t expected = static_cast<std::size_t>(layer.kernel) * layer.kernel *
                                 layer.kernel * layer.in_channels * layer.out_channels;
    if (layer.weights.size() != expected ||
        layer.bias.size() != static_cast<std::size_t>(layer.out_channels)) {
      throw InputError("layer " + std::to_string(l) + ": weight or bias size mismatch");
    }
    for (double w : layer.weights) {
      if (!std::isfinite(w)) throw InputError("layer " + std::to_string(l) + ": non-finite weight");
    }
    for (double b : layer.bias) {
      if (!std::isfinite(b)) throw InputError("layer " + std::to_string(l) + ": non-finite bias");
    }
  }
}

std::size_t EncoderParams::num_parameters() const {
  std::size_t n = 0;
  for (const auto& layer : layers) n += layer.weights.size() + layer.bias.size();
  return n;
}

std::vector<double> EncoderParams::Flatten() const {
  std::vector<double> flat;
  flat.reserve(num_parameters());
  for (const auto& layer : layers) {
    flat.insert(flat.end(), layer.weights.begin(), layer.weights.end());
    flat.insert(flat.end(), layer.bias.begin(), layer.bias.end());
  }
  return flat;
}

void EncoderParams::Unflatten(std::span<const double> flat) {
  if (flat.size() != num_parameters()) throw InputError("flat parameter vector has wrong length");
  auto it = flat.begin();
  for (auto& layer : layers) {
    std::copy_n(it, layer.weights.size(), layer.weights.begin());
    it += static_cast<std::ptrdiff_t>(layer.weights.size());
    std::copy_n(it, layer.bias.size(), layer.bias.begin());
    it += static_cast<std::ptrdiff_t>(layer.bias.size());
  }
}

EncoderParams EncoderParams::ZerosLike() const {
  EncoderParams z = *this;
  for (auto& layer : z.layers) {
    std::fill(layer.weights.begin(), layer.weights.end(), 0.0);
    std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
  }
  return z;
}

void ContrastiveConfig::Validate() const {
  if (!(temperature > 0.0)) throw InputError("temperature must be positive");
  if (negatives_per_anchor < 1) throw InputError("negatives_per_anchor must be positive");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw InputError("learning_rate must be finite and non-negative");
  }
  if (epochs < 0) throw InputError("epochs must be non-negative");
}

EncoderTape::EncoderTape(const VoxelGrid& grid, const EncoderParams& params,
                         std::vector<std::size_t> output_sites)
    : grid_(&grid), params_(&params) {
  params.Validate();
  if (grid.channels() != params.input_channels()) {
    throw InputError("grid has " + std::to_string(grid.channels()) +
                     " channels but the encoder expects " +
                     std::to_string(params.input_channels()));
  }
  const GridSpec& spec = grid.spec();
  const std::size_t n = spec.num_voxels();
  std::sort(output_sites.begin(), output_sites.end());
  output_sites.erase(std::unique(output_sites.begin(), output_sites.end()), output_sites.end());
  if (!output_sites.empty() && output_sites.back() >= n) {
    throw InputError("output site outside the grid");
  }

  const std::size_t num_layers = params.layers.size();
  sites_.resize(num_layers + 1);
  sites_[num_layers] = std::move(output_sites);
  for (std::size_t l = num_layers; l-- > 0;) {
    sites_[l] = Dilate(spec, sites_[l + 1], params.layers[l].kernel / 2);
  }

  pre_.resize(num_layers);
  post_.resize(num_layers);
  for (std::size_t l = 0; l < num_layers; ++l) {
    const ConvLayer& layer = params.layers[l];
    const auto cin = static_cast<std::size_t>(layer.in_channels);
    const auto cout = static_cast<std::size_t>(layer.out_channels);
    const std::vector<double>& in = l == 0 ? grid.data() : post_[l - 1];
    auto& pre = pre_[l];
    auto& post = post_[l];
    pre.assign(n * cout, 0.0);
    post.assign(n * cout, 0.0);
    for (std::size_t s : sites_[l + 1]) {
      double* out = pre.data() + s * cout;
      std::copy(layer.bias.begin(), layer.bias.end(), out);
      ForEachTap(spec, layer, s, [&](std::size_t w0, std::size_t nb) {
        const double* x = in.data() + nb * cin;
        const double* w = layer.weights.data() + w0;
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const double xv = x[ci];
          if (xv == 0.0) continue;
          const double* wr = w + ci * cout;
          for (std::size_t co = 0; co < cout; ++co) out[co] += xv * wr[co];
        }
      });
      double* act = post.data() + s * cout;
      for (std::size_t co = 0; co < cout; ++co) {
        act[co] = layer.activation == Activation::kRelu ? std::max(0.0, out[co]) : out[co];
      }
    }
  }

  const auto cout = static_cast<std::size_t>(params.output_channels());
  norms_.assign(n, 0.0);
  for (std::size_t s : sites_.back()) {
    const double* h = post_.back().data() + s * cout;
    double sq = 0.0;
    for (std::size_t c = 0; c < cout; ++c) sq += h[c] * h[c];
    norms_[s] = std::sqrt(sq);
  }
}

EncoderTape EncoderTape::Full(const VoxelGrid& grid, const EncoderParams& params) {
  std::vector<std::size_t> all(grid.num_voxels());
  for (std::size_t v = 0; v < all.size(); ++v) all[v] = v;
  return EncoderTape(grid, params, std::move(all));
}

FeatureGrid EncoderTape::Output() const {
  const auto cout = static_cast<std::size_t>(params_->output_channels());
  FeatureGrid out(grid_->spec(), params_->output_channels());
  out.occupancy() = grid_->occupancy();
  const auto& occ = grid_->occupancy();
  for (std::size_t s : sites_.back()) {
    if (!(occ[s] > 0.0) || norms_[s] == 0.0) continue;
    const double* h = post_.back().data() + s * cout;
    double* y = out.data().data() + s * cout;
    for (std::size_t c = 0; c < cout; ++c) y[c] = h[c] / norms_[s];
  }
  return out;
}

VoxelGrid EncoderTape::LayerActivation(std::size_t layer) const {
  if (layer >= post_.size()) throw InputError("layer index out of range");
  VoxelGrid out(grid_->spec(), params_->layers[layer].out_channels);
  out.occupancy() = grid_->occupancy();
  out.data() = post_[layer];
  return out;
}

EncoderTape::Gradients EncoderTape::Backward(std::span<const double> upstream) const {
  const GridSpec& spec = grid_->spec();
  const std::size_t n = spec.num_voxels();
  const std::size_t num_layers = params_->layers.size();
  const auto cout_last = static_cast<std::size_t>(params_->output_channels());
  if (upstream.size() != n * cout_last) {
    throw InputError("upstream gradient has " + std::to_string(upstream.size()) +
                     " entries, expected " + std::to_string(n * cout_last));
  }

  Gradients grads{params_->ZerosLike(), {}};

  // Through the masked L2 normalization: d(h/|h|) = (g - y (y.g)) / |h|.
  std::vector<double> g(n * cout_last, 0.0);
  const auto& occ = grid_->occupancy();
  for (std::size_t s : sites_.back()) {
    if (!(occ[s] > 0.0) || norms_[s] == 0.0) continue;
    const double* h = post_.back().data() + s * cout_last;
    const double* u = upstream.data() + s * cout_last;
    double yu = 0.0;
    for (std::size_t c = 0; c < cout_last; ++c) yu += h[c] / norms_[s] * u[c];
    double* gs = g.data() + s * cout_last;
    for (std::size_t c = 0; c < cout_last; ++c) {
      gs[c] = (u[c] - h[c] / norms_[s] * yu) / norms_[s];
    }
  }

  for (std::size_t l = num_layers; l-- > 0;) {
    const ConvLayer& layer = params_->layers[l];
    ConvLayer& dlayer = grads.params.layers[l];
    const auto cin = static_cast<std::size_t>(layer.in_channels);
    const auto cout = static_cast<std::size_t>(layer.out_channels);
    const std::vector<double>& in = l == 0 ? grid_->data() : post_[l - 1];

    if (layer.activation == Activation::kRelu) {
      for (std::size_t s : sites_[l + 1]) {
        for (std::size_t c = 0; c < cout; ++c) {
          if (!(pre_[l][s * cout + c] > 0.0)) g[s * cout + c] = 0.0;
        }
      }
    }

    std::vector<double> gin(n * cin, 0.0);
    for (std::size_t s : sites_[l + 1]) {
      const double* gs = g.data() + s * cout;
      for (std::size_t c = 0; c < cout; ++c) dlayer.bias[c] += gs[c];
      ForEachTap(spec, layer, s, [&](std::size_t w0, std::size_t nb) {
        const double* x = in.data() + nb * cin;
        const double* w = layer.weights.data() + w0;
        double* dw = dlayer.weights.data() + w0;
        double* gx = gin.data() + nb * cin;
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const double xv = x[ci];
          const double* wr = w + ci * cout;
          double* dwr = dw + ci * cout;
          double acc = 0.0;
          for (std::size_t co = 0; co < cout; ++co) {
            dwr[co] += xv * gs[co];
            acc += wr[co] * gs[co];
          }
          gx[ci] += acc;
        }
      });
    }
    g = std::move(gin);
  }
  grads.input = std::move(g);
  return grads;
}

FeatureGrid encoder_forward(const VoxelGrid& grid, const EncoderParams& params) {
  return EncoderTape::Full(grid, params).Output();
}

EncoderTape::Gradients encoder_backward(const VoxelGrid& grid, const EncoderParams& params,
                                        std::span<const double> upstream_grad) {
  return EncoderTape::Full(grid, params).Backward(upstream_grad);
}

std::vector<std::size_t> mask_indices(const VoxelMask& mask) {
  std::vector<std::size_t> idx;
  for (std::size_t v = 0; v < mask.size(); ++v) {
    if (mask[v]) idx.push_back(v);
  }
  return idx;
}

namespace {

void CheckPairShapes(const FeatureGrid& a, const FeatureGrid& b, const VoxelMask& mask) {
  if (!(a.spec() == b.spec()) || a.channels() != b.channels()) {
    throw InputError("feature grids differ in grid spec or channel count");
  }
  if (mask.size() != a.num_voxels()) throw InputError("mask size does not match the grids");
}

double Dot(const double* x, const double* y, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

}  // namespace

ContrastiveResult view_contrastive_loss(const FeatureGrid& feat_a_in_b, const FeatureGrid& feat_b,
                                        const VoxelMask& mask, const ContrastiveConfig& cfg) {
  cfg.Validate();
  CheckPairShapes(feat_a_in_b, feat_b, mask);
  const auto sites = mask_indices(mask);
  if (sites.empty()) throw NoCorrespondencesError();

  const std::size_t m = sites.size();
  const auto c = static_cast<std::size_t>(feat_a_in_b.channels());
  const std::size_t num_neg =
      std::min(static_cast<std::size_t>(cfg.negatives_per_anchor), m - 1);
  const double inv_tau = 1.0 / cfg.temperature;
  const double inv_m = 1.0 / static_cast<double>(m);

  ContrastiveResult res;
  res.num_anchors = m;
  res.grad_a.assign(feat_a_in_b.data().size(), 0.0);
  res.grad_b.assign(feat_b.data().size(), 0.0);
  const double* fa = feat_a_in_b.data().data();
  const double* fb = feat_b.data().data();

  Rng rng(cfg.seed);
  std::vector<std::size_t> negatives;
  std::vector<double> logits(num_neg + 1);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    // Floyd's algorithm over the m - 1 other masked voxels.
    negatives.clear();
    for (std::size_t j = m - 1 - num_neg; j < m - 1; ++j) {
      const auto t = static_cast<std::size_t>(rng.Below(j + 1));
      const bool taken = std::find(negatives.begin(), negatives.end(), t) != negatives.end();
      negatives.push_back(taken ? j : t);
    }
    for (auto& n : negatives) n = sites[n >= i ? n + 1 : n];

    const std::size_t anchor = sites[i];
    const double* a = fa + anchor * c;
    logits[0] = Dot(a, fb + anchor * c, c) * inv_tau;
    for (std::size_t k = 0; k < num_neg; ++k) {
      logits[k + 1] = Dot(a, fb + negatives[k] * c, c) * inv_tau;
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - mx);
    total += mx + std::log(z) - logits[0];

    // dL/dlogit_k = softmax_k - [k == 0], scaled by 1/m for the mean.
    double* ga = res.grad_a.data() + anchor * c;
    for (std::size_t k = 0; k <= num_neg; ++k) {
      const double coeff = (std::exp(logits[k] - mx) / z - (k == 0 ? 1.0 : 0.0)) * inv_tau * inv_m;
      const std::size_t other = k == 0 ? anchor : negatives[k - 1];
      const double* b = fb + other * c;
      double* gb = res.grad_b.data() + other * c;
      for (std::size_t ch = 0; ch < c; ++ch) {
        ga[ch] += coeff * b[ch];
        gb[ch] += coeff * a[ch];
      }
    }
  }
  res.loss = total * inv_m;
  return res;
}

double retrieval_accuracy(const FeatureGrid& feat_a_in_b, const FeatureGrid& feat_b,
                          const VoxelMask& mask) {
  CheckPairShapes(feat_a_in_b, feat_b, mask);
  const auto sites = mask_indices(mask);
  if (sites.size() < 2) throw InputError("retrieval accuracy needs at least two masked voxels");
  const std::size_t m = sites.size();
  const auto c = static_cast<std::size_t>(feat_a_in_b.channels());

  auto normalized = [&](const FeatureGrid& g) {
    std::vector<double> out(m * c, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      const double* f = g.data().data() + sites[i] * c;
      const double norm = std::sqrt(Dot(f, f, c));
      if (norm == 0.0) continue;
      for (std::size_t ch = 0; ch < c; ++ch) out[i * c + ch] = f[ch] / norm;
    }
    return out;
  };
  const auto a = normalized(feat_a_in_b);
  const auto b = normalized(feat_b);

  std::size_t hits = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double own = Dot(a.data() + i * c, b.data() + i * c, c);
    bool best = true;
    for (std::size_t j = 0; j < m && best; ++j) {
      if (j != i && Dot(a.data() + i * c, b.data() + j * c, c) >= own) best = false;
    }
    if (best) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(m);
}

PairGrids prepare_pair(const ScenePair& pair, int grid_dims) {
  const CameraIntrinsics& k = pair.intrinsics;
  k.Validate();
  const auto points_a = unproject_depth(pair.depth_a, k, RigidPose::Identity());
  PairGrids out;
  if (points_a.empty()) {
    out.mask.clear();
    return out;
  }
  const GridSpec spec_a = default_grid_spec(points_a, grid_dims);

  const RigidPose a_to_b = compose_pose(invert_pose(pair.pose_b), pair.pose_a);
  const Eigen::Vector3d half =
      Eigen::Vector3d(spec_a.dims[0] - 1, spec_a.dims[1] - 1, spec_a.dims[2] - 1) *
      (0.5 * spec_a.voxel_size);
  GridSpec spec_b = spec_a;
  spec_b.origin = a_to_b.Apply(spec_a.origin + half) - half;

  const VoxelGrid grid_a =
      lift_to_grid(pair.rgb_a, pair.depth_a, k, RigidPose::Identity(), spec_a);
  out.a_in_b = warp_grid(grid_a, a_to_b, spec_b);
  out.b = lift_to_grid(pair.rgb_b, pair.depth_b, k, RigidPose::Identity(), spec_b);
  out.mask = covisibility_mask(spec_b, pair.depth_a, a_to_b, pair.depth_b, RigidPose::Identity(), k);
  out.mask_count = static_cast<std::size_t>(std::count(out.mask.begin(), out.mask.end(), 1));
  return out;
}

TrainResult train_on_grids(std::span<const PairGrids> grids, const EncoderParams& params0,
                           const ContrastiveConfig& cfg) {
  cfg.Validate();
  params0.Validate();
  TrainResult result{params0, {}, 0};
  if (cfg.epochs == 0) return result;

  std::vector<std::size_t> usable;
  for (std::size_t p = 0; p < grids.size(); ++p) {
    if (grids[p].mask_count > 0) {
      usable.push_back(p);
    } else {
      ++result.skipped_pairs;
    }
  }
  if (usable.empty()) {
    throw NoCorrespondencesError("no correspondences: every training pair has an empty covisibility mask");
  }

  EncoderParams& params = result.params;
  std::vector<double> flat = params.Flatten();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double sum = 0.0;
    for (std::size_t p : usable) {
      const PairGrids& pg = grids[p];
      auto sites = mask_indices(pg.mask);
      const EncoderTape tape_a(pg.a_in_b, params, sites);
      const EncoderTape tape_b(pg.b, params, std::move(sites));
      ContrastiveConfig pair_cfg = cfg;
      pair_cfg.seed = DeriveSeed(cfg.seed, static_cast<std::uint64_t>(p));
      const ContrastiveResult loss =
          view_contrastive_loss(tape_a.Output(), tape_b.Output(), pg.mask, pair_cfg);
      const auto ga = tape_a.Backward(loss.grad_a).params.Flatten();
      const auto gb = tape_b.Backward(loss.grad_b).params.Flatten();
      for (std::size_t i = 0; i < flat.size(); ++i) {
        flat[i] -= cfg.learning_rate * (ga[i] + gb[i]);
      }
      params.Unflatten(flat);
      sum += loss.loss;
    }
    result.loss_curve.push_back(sum / static_cast<double>(usable.size()));
  }
  return result;
}

TrainResult train_view_prediction(std::span<const ScenePair> pairs, const EncoderParams& params0,
                                  const ContrastiveConfig& cfg, int grid_dims) {
  cfg.Validate();
  if (cfg.epochs == 0) return TrainResult{params0, {}, 0};
  std::vector<PairGrids> grids;
  grids.reserve(pairs.size());
  for (const auto& pair : pairs) grids.push_back(prepare_pair(pair, grid_dims));
  return train_on_grids(grids, params0, cfg);
}

}  // namespace geovoxel
