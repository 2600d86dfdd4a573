#ifndef GEOVOXEL_PIPELINE_HPP
#define GEOVOXEL_PIPELINE_HPP

// End-to-end stages. Each stage reads what earlier stages wrote under
// cfg.out_dir and writes its own subdirectory:
//
//   synth/      manifest.json, renders of stimuli and training pairs
//   train/      encoder tensors, encoder.json, loss_curve.csv, summary.json
//   features/   <model>/<layer> stimulus x feature matrices
//   responses/  <subject>/ trials, signal, atlas
//   encode/     <subject>/nc and <subject>/<model>/<layer>/metrics
//   stats/      summary.json, difference maps
//   report/     report.csv, report.json
//
// Any failure escapes as StageError tagged with the stage name.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "geovoxel/config.hpp"
#include "geovoxel/featmodel.hpp"
#include "geovoxel/geometry.hpp"

namespace geovoxel {

inline constexpr std::string_view kStageNames[] = {"synth",  "train", "featurize", "encode",
                                                   "stats",  "report", "run"};

// Dispatches by name; "run" executes every stage in order.
void run_stage(std::string_view stage, const RunConfig& cfg);

void stage_synth(const RunConfig& cfg);
void stage_train(const RunConfig& cfg);
void stage_featurize(const RunConfig& cfg);
void stage_encode(const RunConfig& cfg);
void stage_stats(const RunConfig& cfg);
void stage_report(const RunConfig& cfg);
void run_pipeline(const RunConfig& cfg);

// One long-format report line.
struct ReportRow {
  std::string subject;
  std::string roi;
  std::string model;
  std::string layer;
  std::string metric;  // r, r2, nc, r2_nc, t or p
  double value = 0.0;
};

// Stable sort by (subject, roi, model, layer), then metric in the order
// r, r2, nc, r2_nc, t, p.
void sort_report_rows(std::vector<ReportRow>& rows);

// Shortest text that parses back to the same double ("%.17g" for finite
// values); NaN becomes the empty string.
std::string format_csv_value(double value);

// Header plus one line per row.
std::string report_csv(const std::vector<ReportRow>& rows);

// Mean of each channel over occupied voxels in each of blocks^3 equal
// spatial blocks; output is block-major, channel-minor.
std::vector<double> block_pool(const VoxelGrid& grid, int blocks);

// Box-averaged 8x8 RGB thumbnail, row-major with interleaved channels.
std::vector<double> pixel_features(const RgbImage& rgb, int size = 8);

// Encoder activations of a rendered view, lifted on its default grid and
// pooled. `layer` is "conv1" or "conv2".
std::vector<double> grnn_features(const RgbImage& rgb, const DepthImage& depth,
                                  const CameraIntrinsics& k, const EncoderParams& params,
                                  const std::string& layer, int grid_dims, int pool_blocks);

void save_encoder(const std::filesystem::path& dir, const EncoderParams& params);
EncoderParams load_encoder(const std::filesystem::path& dir);

}  // namespace geovoxel

#endif  // GEOVOXEL_PIPELINE_HPP
