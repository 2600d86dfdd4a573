#ifndef GEOVOXEL_FEATMODEL_HPP
#define GEOVOXEL_FEATMODEL_HPP

// 3D convolutional voxel encoder and the view-contrastive objective used to
// train it on pairs of egomotion-stabilized voxel grids.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "geovoxel/geometry.hpp"

namespace geovoxel {

enum class Activation { kNone, kRelu };

// Same-padded, stride-1 3D convolution. Weights are laid out as
// [dx][dy][dz][in_channels][out_channels] with dx, dy, dz in [0, kernel).
struct ConvLayer {
  int kernel = 1;
  int in_channels = 1;
  int out_channels = 1;
  Activation activation = Activation::kNone;
  std::vector<double> weights;
  std::vector<double> bias;

  ConvLayer() = default;
  ConvLayer(int kernel, int in_channels, int out_channels, Activation activation);

  std::size_t weight_index(int dx, int dy, int dz, int ci, int co) const {
    return ((((static_cast<std::size_t>(dx) * kernel + dy) * kernel + dz) * in_channels + ci) *
            out_channels) +
           co;
  }
};

struct EncoderParams {
  std::vector<ConvLayer> layers;

  // 3x3x3 conv (3 -> 16, relu) followed by 1x1x1 conv (16 -> 32), with
  // He-initialized weights drawn from `seed` and zero biases.
  static EncoderParams Default(std::uint64_t seed);

  // Throws InputError on odd-kernel, channel-chaining or size violations.
  void Validate() const;

  int input_channels() const { return layers.front().in_channels; }
  int output_channels() const { return layers.back().out_channels; }
  std::size_t num_parameters() const;

  // Flat views used by the optimizer and gradient checks; the order is
  // layer by layer, weights then bias.
  std::vector<double> Flatten() const;
  void Unflatten(std::span<const double> flat);

  // Same architecture with every weight and bias set to zero.
  EncoderParams ZerosLike() const;
};

struct ContrastiveConfig {
  double temperature = 0.07;
  int negatives_per_anchor = 64;
  double learning_rate = 0.1;
  int epochs = 30;
  std::uint64_t seed = 0;

  void Validate() const;
};

// A VoxelGrid whose channels are encoder outputs. Occupancy is copied from
// the encoded grid; feature vectors have unit norm where occupancy > 0 and
// the pre-normalization vector is nonzero, and are zero elsewhere.
using FeatureGrid = VoxelGrid;

// Forward pass restricted to a set of output voxels. Only the receptive
// field of those voxels is evaluated, so sparse sites make training cheap;
// passing every voxel reproduces encoder_forward exactly.
class EncoderTape {
 public:
  EncoderTape(const VoxelGrid& grid, const EncoderParams& params,
              std::vector<std::size_t> output_sites);

  static EncoderTape Full(const VoxelGrid& grid, const EncoderParams& params);

  // Normalized output features; zero away from the output sites.
  FeatureGrid Output() const;

  // Post-activation output of layer `layer` (before normalization for the
  // last layer), zero away from that layer's evaluated sites.
  VoxelGrid LayerActivation(std::size_t layer) const;

  struct Gradients {
    EncoderParams params;
    std::vector<double> input;  // same layout as VoxelGrid::data()
  };

  // Backpropagates `upstream` (dL/d output features, VoxelGrid::data()
  // layout). Entries away from the output sites are ignored.
  Gradients Backward(std::span<const double> upstream) const;

  const std::vector<std::size_t>& output_sites() const { return sites_.back(); }

 private:
  const VoxelGrid* grid_;
  const EncoderParams* params_;
  // sites_[l] are the voxels where layer l-1's output is needed (sites_[0]
  // indexes the input grid); sites_.back() are the output sites.
  std::vector<std::vector<std::size_t>> sites_;
  std::vector<std::vector<double>> pre_;   // per layer, dense N * C_out
  std::vector<std::vector<double>> post_;  // per layer, dense N * C_out
  std::vector<double> norms_;              // per voxel L2 norm of the last layer
};

FeatureGrid encoder_forward(const VoxelGrid& grid, const EncoderParams& params);

EncoderTape::Gradients encoder_backward(const VoxelGrid& grid, const EncoderParams& params,
                                        std::span<const double> upstream_grad);

struct ContrastiveResult {
  double loss = 0.0;
  std::vector<double> grad_a;  // dL/d featA_in_B, VoxelGrid::data() layout
  std::vector<double> grad_b;  // dL/d featB
  std::size_t num_anchors = 0;
};

// InfoNCE over masked voxels. Every masked voxel is an anchor taken from
// `feat_a_in_b`; its positive is the same voxel of `feat_b` and its
// negatives are min(negatives_per_anchor, M - 1) distinct other masked
// voxels of `feat_b`, drawn from cfg.seed. Throws NoCorrespondencesError on
// an empty mask.
ContrastiveResult view_contrastive_loss(const FeatureGrid& feat_a_in_b, const FeatureGrid& feat_b,
                                        const VoxelMask& mask, const ContrastiveConfig& cfg);

// Fraction of masked anchors whose most cosine-similar masked voxel of
// `feat_b` is their own voxel. Ties count as failures.
double retrieval_accuracy(const FeatureGrid& feat_a_in_b, const FeatureGrid& feat_b,
                          const VoxelMask& mask);

struct ScenePair {
  RgbImage rgb_a;
  DepthImage depth_a;
  RigidPose pose_a;  // camera A to world
  RgbImage rgb_b;
  DepthImage depth_b;
  RigidPose pose_b;  // camera B to world
  CameraIntrinsics intrinsics;
};

// Both views lifted in camera B's frame, plus their covisibility.
struct PairGrids {
  VoxelGrid a_in_b;
  VoxelGrid b;
  VoxelMask mask;
  std::size_t mask_count = 0;
};

// Lifts view A on a default grid around its own points, warps it into
// camera B's frame, and lifts view B on the transported grid.
PairGrids prepare_pair(const ScenePair& pair, int grid_dims = 32);

struct TrainResult {
  EncoderParams params;
  std::vector<double> loss_curve;  // mean loss per epoch
  std::size_t skipped_pairs = 0;   // pairs with empty covisibility
};

// Plain SGD over the pairs in order, one step per pair. Negatives for a
// pair are drawn from a seed derived from cfg.seed and the pair index, so
// they are the same in every epoch.
TrainResult train_view_prediction(std::span<const ScenePair> pairs, const EncoderParams& params0,
                                  const ContrastiveConfig& cfg, int grid_dims = 32);

// Same, on grids already produced by prepare_pair.
TrainResult train_on_grids(std::span<const PairGrids> grids, const EncoderParams& params0,
                           const ContrastiveConfig& cfg);

// Masked voxel indices in ascending order.
std::vector<std::size_t> mask_indices(const VoxelMask& mask);

}  // namespace geovoxel

#endif  // GEOVOXEL_FEATMODEL_HPP
