#ifndef GEOVOXEL_RESPONSES_HPP
#define GEOVOXEL_RESPONSES_HPP

// Synthetic voxel responses with known ground truth, and synthetic ROI
// atlases to aggregate them.

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "geovoxel/encoding.hpp"
#include "geovoxel/roistats.hpp"

namespace geovoxel {

struct SyntheticResponses {
  ResponseMatrix responses;        // values = trial means
  Eigen::MatrixXd signal;          // S x V noiseless responses
  Eigen::MatrixXd true_weights;    // F x V readout of the raw features
  Eigen::RowVectorXd true_intercept;
  std::vector<std::vector<std::size_t>> readout_features;  // per voxel
};

// Each voxel reads out a seeded random subset of `subset_size` z-scored
// features with standard-normal weights; the readout is rescaled to zero
// mean and unit variance across stimuli, and every trial adds independent
// Gaussian noise with standard deviation `noise_level`. A subset size of 0
// uses min(F, 8) features.
SyntheticResponses synth_responses(const FeatureMatrix& features, int voxels, double noise_level,
                                   int repeats, std::uint64_t seed, int subset_size = 0);

// The seven visual-stream ROIs used for reporting, ids 1..7.
const std::vector<std::string>& stream_roi_names();

// Assigns voxels to ROIs round-robin after a seeded shuffle, so every ROI
// gets floor(V / 7) or ceil(V / 7) voxels.
RoiAtlas synth_atlas(int voxels, std::uint64_t seed);

}  // namespace geovoxel

#endif  // GEOVOXEL_RESPONSES_HPP
