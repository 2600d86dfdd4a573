#ifndef GEOVOXEL_CONFIG_HPP
#define GEOVOXEL_CONFIG_HPP

// Run configuration for the end-to-end pipeline, read from one JSON
// document. Every field has a default, so `{}` is a valid configuration.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "geovoxel/encoding.hpp"
#include "geovoxel/featmodel.hpp"
#include "geovoxel/scene.hpp"

namespace geovoxel {

// One group of synthetic voxels driven by the features of (model, layer).
// An empty ROI list means "every ROI not claimed by another source".
struct ResponseSource {
  std::string model = "grnn";
  std::string layer = "conv2";
  std::vector<std::string> rois;
};

struct ResponseConfig {
  int subjects = 4;
  int voxels = 50;
  int repeats = 3;
  double noise_level = 0.5;
  int subset_size = 8;
  std::vector<ResponseSource> sources = {ResponseSource{}};
};

// Externally computed features: layer name -> tensor container base path.
struct ExternalModel {
  std::string name;
  std::vector<std::pair<std::string, std::filesystem::path>> layers;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "geovoxel_out";
  int threads = 1;

  SceneSpec scene;
  int stimuli = 200;
  int train_pairs = 20;
  int heldout_pairs = 5;
  int grid_dims = 32;
  int pool_blocks = 2;

  ContrastiveConfig contrastive;
  SplitConfig split;
  ResponseConfig responses;

  // Built-in models: "grnn" (layers from `grnn_layers`), "pixels" (layer
  // "rgb8") and "random" (layer "gaussian"). Names of external models may
  // be listed too.
  std::vector<std::string> models = {"grnn", "pixels", "random"};
  std::vector<std::string> grnn_layers = {"conv1", "conv2"};
  std::vector<ExternalModel> external_models;
  // Model pairs for paired tests and difference maps; defaults to every
  // pair of `models` in list order.
  std::vector<std::pair<std::string, std::string>> comparisons;

  double nc_threshold = 0.10;
  std::size_t pca_components = 1000;
  int random_features = 64;

  // Explicit per-stream seeds; streams not listed derive from `seed`.
  std::map<std::string, std::uint64_t> seeds;

  std::uint64_t Seed(const std::string& stream) const;

  // Layer names of a model, in model order.
  std::vector<std::string> LayersOf(const std::string& model) const;

  std::vector<std::pair<std::string, std::string>> Comparisons() const;

  // Checks value ranges, model references and that every external feature
  // file is readable. Throws InputError.
  void Validate() const;
};

RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::filesystem::path& path);

// Canonical JSON of the effective configuration.
std::string config_to_json(const RunConfig& cfg);

}  // namespace geovoxel

#endif  // GEOVOXEL_CONFIG_HPP
