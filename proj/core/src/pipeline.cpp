#include "geovoxel/pipeline.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

#include "geovoxel/encoding.hpp"
#include "geovoxel/error.hpp"
#include "geovoxel/parallel.hpp"
#include "geovoxel/random.hpp"
#include "geovoxel/responses.hpp"
#include "geovoxel/roistats.hpp"
#include "geovoxel/scene.hpp"
#include "geovoxel/tensor_io.hpp"

namespace geovoxel {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// ---- small file helpers ----

void write_text_atomic(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << text;
    if (!out) throw Error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("missing " + path.string() + " (run the earlier stage first)");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InputError("malformed " + path.string() + ": " + e.what());
  }
}

// NaN is not representable in JSON; it is stored as null.
ordered_json onum(double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); }
double from_num(const json& j) { return j.is_null() ? kNaN : j.get<double>(); }

std::string subject_name(int index, int count) {
  const int width = std::max(2, static_cast<int>(std::to_string(count).size()));
  std::string digits = std::to_string(index + 1);
  return "sub" + std::string(static_cast<std::size_t>(width) - digits.size(), '0') + digits;
}

std::vector<std::string> subject_names(const RunConfig& cfg) {
  std::vector<std::string> names;
  for (int i = 0; i < cfg.responses.subjects; ++i) {
    names.push_back(subject_name(i, cfg.responses.subjects));
  }
  return names;
}

ordered_json pose_json(const RigidPose& p) {
  ordered_json r = ordered_json::array();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r.push_back(p.rotation(i, j));
  return {{"rotation", r},
          {"translation", {p.translation.x(), p.translation.y(), p.translation.z()}}};
}

// ---- synth manifest ----

struct Manifest {
  std::vector<std::uint64_t> stimulus_seeds;
  std::vector<std::uint64_t> train_seeds;
  std::vector<std::uint64_t> heldout_seeds;
};

json scene_section(const RunConfig& cfg) { return json::parse(config_to_json(cfg)).at("scene"); }

Manifest load_manifest(const RunConfig& cfg) {
  const json j = read_json(cfg.out_dir / "synth" / "manifest.json");
  if (j.at("scene") != scene_section(cfg)) {
    throw InputError("synth outputs were made with a different scene configuration; rerun synth");
  }
  Manifest m;
  for (const auto& s : j.at("stimuli")) m.stimulus_seeds.push_back(s.at("seed").get<std::uint64_t>());
  for (const auto& s : j.at("train_pairs")) m.train_seeds.push_back(s.at("seed").get<std::uint64_t>());
  for (const auto& s : j.at("heldout_pairs")) {
    m.heldout_seeds.push_back(s.at("seed").get<std::uint64_t>());
  }
  if (m.stimulus_seeds.size() != static_cast<std::size_t>(cfg.stimuli)) {
    throw InputError("synth manifest has " + std::to_string(m.stimulus_seeds.size()) +
                     " stimuli but the configuration asks for " + std::to_string(cfg.stimuli));
  }
  return m;
}

std::vector<std::uint64_t> seed_list(std::uint64_t parent, int count) {
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < count; ++i) seeds.push_back(DeriveSeed(parent, static_cast<std::uint64_t>(i)));
  return seeds;
}

// Appends one rendered view to flat u8 RGB and f32 depth buffers.
void append_render(const RgbImage& rgb, const DepthImage& depth, std::vector<std::uint8_t>& rgb_out,
                   std::vector<float>& depth_out) {
  for (double c : rgb.rgb) {
    rgb_out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(c, 0.0, 1.0) * 255.0)));
  }
  for (double d : depth.depth) depth_out.push_back(static_cast<float>(d));
}

// ---- features ----

struct GrnnLayers {
  std::vector<double> conv1;
  std::vector<double> conv2;
};

std::vector<double> pool_with(const VoxelGrid& grid, const std::vector<double>& occupancy,
                              int blocks) {
  const GridSpec& spec = grid.spec();
  const auto c = static_cast<std::size_t>(grid.channels());
  const auto nb = static_cast<std::size_t>(blocks);
  std::vector<double> sums(nb * nb * nb * c, 0.0);
  std::vector<double> counts(nb * nb * nb, 0.0);
  for (std::size_t v = 0; v < grid.num_voxels(); ++v) {
    if (!(occupancy[v] > 0.0)) continue;
    const auto ijk = spec.Coords(v);
    std::array<std::size_t, 3> b{};
    for (int a = 0; a < 3; ++a) {
      b[static_cast<std::size_t>(a)] =
          static_cast<std::size_t>(ijk[static_cast<std::size_t>(a)]) * nb /
          static_cast<std::size_t>(spec.dims[static_cast<std::size_t>(a)]);
    }
    const std::size_t block = (b[0] * nb + b[1]) * nb + b[2];
    counts[block] += 1.0;
    const auto f = grid.feature(v);
    for (std::size_t ch = 0; ch < c; ++ch) sums[block * c + ch] += f[ch];
  }
  for (std::size_t block = 0; block < counts.size(); ++block) {
    if (counts[block] == 0.0) continue;
    for (std::size_t ch = 0; ch < c; ++ch) sums[block * c + ch] /= counts[block];
  }
  return sums;
}

GrnnLayers grnn_both(const RgbImage& rgb, const DepthImage& depth, const CameraIntrinsics& k,
                     const EncoderParams& params, int grid_dims, int pool_blocks) {
  const auto nb3 = static_cast<std::size_t>(pool_blocks) * pool_blocks * pool_blocks;
  const auto points = unproject_depth(depth, k, RigidPose::Identity());
  if (points.empty()) {
    return {std::vector<double>(nb3 * static_cast<std::size_t>(params.layers.front().out_channels), 0.0),
            std::vector<double>(nb3 * static_cast<std::size_t>(params.output_channels()), 0.0)};
  }
  const GridSpec spec = default_grid_spec(points, grid_dims);
  const VoxelGrid grid = lift_to_grid(rgb, depth, k, RigidPose::Identity(), spec);
  std::vector<std::size_t> sites;
  for (std::size_t v = 0; v < grid.num_voxels(); ++v) {
    if (grid.occupancy()[v] > 0.0) sites.push_back(v);
  }
  const EncoderTape tape(grid, params, std::move(sites));
  return {pool_with(tape.LayerActivation(0), grid.occupancy(), pool_blocks),
          pool_with(tape.Output(), grid.occupancy(), pool_blocks)};
}

fs::path feature_path(const RunConfig& cfg, const std::string& model, const std::string& layer) {
  return cfg.out_dir / "features" / model / layer;
}

std::vector<std::string> models_to_featurize(const RunConfig& cfg) {
  std::vector<std::string> models = cfg.models;
  for (const auto& src : cfg.responses.sources) {
    if (std::find(models.begin(), models.end(), src.model) == models.end()) {
      models.push_back(src.model);
    }
  }
  return models;
}

Eigen::MatrixXd load_features(const RunConfig& cfg, const std::string& model,
                              const std::string& layer) {
  Eigen::MatrixXd m = read_tensor(feature_path(cfg, model, layer)).ToMatrix();
  if (m.rows() != cfg.stimuli) {
    throw InputError("features " + model + "/" + layer + " have " + std::to_string(m.rows()) +
                     " rows, expected " + std::to_string(cfg.stimuli));
  }
  return m;
}

// ---- stats helpers ----

const std::array<std::string_view, 6> kMetricOrder = {"r", "r2", "nc", "r2_nc", "t", "p"};

int metric_rank(const std::string& metric) {
  for (std::size_t i = 0; i < kMetricOrder.size(); ++i) {
    if (kMetricOrder[i] == metric) return static_cast<int>(i);
  }
  return static_cast<int>(kMetricOrder.size());
}

// Mean over voxels in the ROI that pass the mask, ignoring NaN entries;
// NaN when no finite value remains.
double masked_roi_mean(const std::vector<double>& metric, const std::vector<std::uint8_t>& mask,
                       const RoiAtlas& atlas, int roi) {
  std::vector<std::uint8_t> finite_mask(mask.size(), 0);
  for (std::size_t v = 0; v < mask.size(); ++v) {
    finite_mask[v] = mask[v] && std::isfinite(metric[v]) ? 1 : 0;
  }
  try {
    return roi_mean(metric, finite_mask, atlas, roi);
  } catch (const EmptyRoiError&) {
    return kNaN;
  }
}

struct LayerMetrics {
  std::vector<double> cv, r, r2, lambda, r2_nc;
};

std::string comparison_label(const std::string& a, const std::string& b) { return a + "_vs_" + b; }

}  // namespace

// ---- public helpers ----

std::vector<double> block_pool(const VoxelGrid& grid, int blocks) {
  if (blocks < 1) throw InputError("pool blocks must be >= 1");
  for (int d : grid.spec().dims) {
    if (blocks > d) throw InputError("pool blocks exceed grid dims");
  }
  return pool_with(grid, grid.occupancy(), blocks);
}

std::vector<double> pixel_features(const RgbImage& rgb, int size) {
  if (size < 1 || size > rgb.width || size > rgb.height) {
    throw InputError("thumbnail size must be in [1, image size]");
  }
  const auto n = static_cast<std::size_t>(size);
  std::vector<double> sums(n * n * 3, 0.0);
  std::vector<double> counts(n * n, 0.0);
  for (int v = 0; v < rgb.height; ++v) {
    const auto by = static_cast<std::size_t>(v) * n / static_cast<std::size_t>(rgb.height);
    for (int u = 0; u < rgb.width; ++u) {
      const auto bx = static_cast<std::size_t>(u) * n / static_cast<std::size_t>(rgb.width);
      const std::size_t cell = by * n + bx;
      counts[cell] += 1.0;
      const auto c = rgb.at(u, v);
      for (std::size_t ch = 0; ch < 3; ++ch) sums[cell * 3 + ch] += c[ch];
    }
  }
  for (std::size_t cell = 0; cell < counts.size(); ++cell) {
    for (std::size_t ch = 0; ch < 3; ++ch) sums[cell * 3 + ch] /= counts[cell];
  }
  return sums;
}

std::vector<double> grnn_features(const RgbImage& rgb, const DepthImage& depth,
                                  const CameraIntrinsics& k, const EncoderParams& params,
                                  const std::string& layer, int grid_dims, int pool_blocks) {
  if (layer != "conv1" && layer != "conv2") throw InputError("unknown grnn layer '" + layer + "'");
  GrnnLayers both = grnn_both(rgb, depth, k, params, grid_dims, pool_blocks);
  return layer == "conv1" ? std::move(both.conv1) : std::move(both.conv2);
}

void save_encoder(const fs::path& dir, const EncoderParams& params) {
  ordered_json layers = ordered_json::array();
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const ConvLayer& layer = params.layers[l];
    const auto k = static_cast<std::size_t>(layer.kernel);
    const std::string stem = "layer" + std::to_string(l);
    write_tensor(dir / (stem + "_weight"),
                 Tensor::FromF64(stem + "_weight",
                                 {k, k, k, static_cast<std::size_t>(layer.in_channels),
                                  static_cast<std::size_t>(layer.out_channels)},
                                 layer.weights));
    write_tensor(dir / (stem + "_bias"),
                 Tensor::FromF64(stem + "_bias", {static_cast<std::size_t>(layer.out_channels)},
                                 layer.bias));
    layers.push_back({{"kernel", layer.kernel},
                      {"in_channels", layer.in_channels},
                      {"out_channels", layer.out_channels},
                      {"activation", layer.activation == Activation::kRelu ? "relu" : "none"},
                      {"weight", stem + "_weight"},
                      {"bias", stem + "_bias"}});
  }
  write_text_atomic(dir / "encoder.json", ordered_json{{"layers", layers}}.dump(2) + "\n");
}

EncoderParams load_encoder(const fs::path& dir) {
  const json j = read_json(dir / "encoder.json");
  EncoderParams params;
  for (const auto& l : j.at("layers")) {
    const std::string act = l.at("activation").get<std::string>();
    if (act != "relu" && act != "none") throw InputError("unknown activation '" + act + "'");
    ConvLayer layer(l.at("kernel").get<int>(), l.at("in_channels").get<int>(),
                    l.at("out_channels").get<int>(),
                    act == "relu" ? Activation::kRelu : Activation::kNone);
    const auto w = read_tensor(dir / l.at("weight").get<std::string>()).ToF64();
    const auto b = read_tensor(dir / l.at("bias").get<std::string>()).ToF64();
    if (w.size() != layer.weights.size() || b.size() != layer.bias.size()) {
      throw InputError("encoder tensor sizes do not match encoder.json");
    }
    layer.weights = w;
    layer.bias = b;
    params.layers.push_back(std::move(layer));
  }
  params.Validate();
  return params;
}

void sort_report_rows(std::vector<ReportRow>& rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) {
    if (a.subject != b.subject) return a.subject < b.subject;
    if (a.roi != b.roi) return a.roi < b.roi;
    if (a.model != b.model) return a.model < b.model;
    if (a.layer != b.layer) return a.layer < b.layer;
    return metric_rank(a.metric) < metric_rank(b.metric);
  });
}

std::string format_csv_value(double value) {
  if (std::isnan(value)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

std::string report_csv(const std::vector<ReportRow>& rows) {
  std::string out = "subject,roi,model,layer,metric,value\n";
  for (const auto& row : rows) {
    out += row.subject + "," + row.roi + "," + row.model + "," + row.layer + "," + row.metric +
           "," + format_csv_value(row.value) + "\n";
  }
  return out;
}

// ---- stages ----

void stage_synth(const RunConfig& cfg) {
  cfg.Validate();
  const fs::path dir = cfg.out_dir / "synth";
  fs::create_directories(dir);

  const auto stimulus_seeds = seed_list(cfg.Seed("stimuli"), cfg.stimuli);
  const auto pair_seeds = seed_list(cfg.Seed("pairs"), cfg.train_pairs + cfg.heldout_pairs);

  const auto w = static_cast<std::size_t>(cfg.scene.image_width);
  const auto h = static_cast<std::size_t>(cfg.scene.image_height);

  std::vector<std::uint8_t> stim_rgb;
  std::vector<float> stim_depth;
  std::vector<ordered_json> stim_entries(stimulus_seeds.size());
  {
    std::vector<RenderedView> views(stimulus_seeds.size());
    parallel_for(views.size(), cfg.threads, [&](std::size_t i) {
      const SyntheticScene scene = synth_scene(stimulus_seeds[i], cfg.scene);
      views[i] = render_depth(scene, scene.cameras[0]);
    });
    for (std::size_t i = 0; i < views.size(); ++i) {
      append_render(views[i].rgb, views[i].depth, stim_rgb, stim_depth);
      stim_entries[i] = {{"index", i}, {"seed", stimulus_seeds[i]}};
    }
  }
  write_tensor(dir / "stimuli_rgb", Tensor::FromU8("stimuli_rgb", {stimulus_seeds.size(), h, w, 3}, stim_rgb));
  write_tensor(dir / "stimuli_depth",
               Tensor::FromF32("stimuli_depth", {stimulus_seeds.size(), h, w}, stim_depth));

  std::vector<ScenePair> pairs(pair_seeds.size());
  parallel_for(pairs.size(), cfg.threads, [&](std::size_t i) {
    pairs[i] = render_pair(synth_scene(pair_seeds[i], cfg.scene));
  });
  std::vector<std::uint8_t> pair_rgb;
  std::vector<float> pair_depth;
  ordered_json train = ordered_json::array();
  ordered_json heldout = ordered_json::array();
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    append_render(pairs[i].rgb_a, pairs[i].depth_a, pair_rgb, pair_depth);
    append_render(pairs[i].rgb_b, pairs[i].depth_b, pair_rgb, pair_depth);
    ordered_json entry = {{"index", i},
                          {"seed", pair_seeds[i]},
                          {"pose_a", pose_json(pairs[i].pose_a)},
                          {"pose_b", pose_json(pairs[i].pose_b)}};
    (i < static_cast<std::size_t>(cfg.train_pairs) ? train : heldout).push_back(std::move(entry));
  }
  if (!pairs.empty()) {
    write_tensor(dir / "pairs_rgb", Tensor::FromU8("pairs_rgb", {pairs.size(), 2, h, w, 3}, pair_rgb));
    write_tensor(dir / "pairs_depth",
                 Tensor::FromF32("pairs_depth", {pairs.size(), 2, h, w}, pair_depth));
  }

  const CameraIntrinsics k =
      CameraIntrinsics::FromHorizontalFov(cfg.scene.image_width, cfg.scene.image_height,
                                          cfg.scene.hfov_degrees);
  ordered_json manifest;
  manifest["scene"] = ordered_json::parse(scene_section(cfg).dump());
  manifest["intrinsics"] = {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy},
                            {"width", k.width}, {"height", k.height}};
  manifest["stimuli"] = stim_entries;
  manifest["train_pairs"] = train;
  manifest["heldout_pairs"] = heldout;
  write_text_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
  write_text_atomic(cfg.out_dir / "config.json", config_to_json(cfg) + "\n");
}

void stage_train(const RunConfig& cfg) {
  cfg.Validate();
  const Manifest manifest = load_manifest(cfg);
  const fs::path dir = cfg.out_dir / "train";

  std::vector<std::uint64_t> seeds = manifest.train_seeds;
  seeds.insert(seeds.end(), manifest.heldout_seeds.begin(), manifest.heldout_seeds.end());
  std::vector<PairGrids> grids(seeds.size());
  parallel_for(seeds.size(), cfg.threads, [&](std::size_t i) {
    grids[i] = prepare_pair(render_pair(synth_scene(seeds[i], cfg.scene)), cfg.grid_dims);
  });
  const std::size_t n_train = manifest.train_seeds.size();
  std::vector<PairGrids> heldout(std::make_move_iterator(grids.begin() + static_cast<std::ptrdiff_t>(n_train)),
                                 std::make_move_iterator(grids.end()));
  grids.resize(n_train);

  ContrastiveConfig ccfg = cfg.contrastive;
  ccfg.seed = cfg.Seed("contrastive");
  const EncoderParams params0 = EncoderParams::Default(cfg.Seed("encoder_init"));

  TrainResult result;
  if (grids.empty() || ccfg.epochs == 0) {
    result.params = params0;
  } else {
    result = train_on_grids(grids, params0, ccfg);
  }

  auto retrieval = [&](const EncoderParams& p) {
    double sum = 0.0;
    int n = 0;
    for (const auto& g : heldout) {
      if (g.mask_count < 2) continue;
      sum += retrieval_accuracy(encoder_forward(g.a_in_b, p), encoder_forward(g.b, p), g.mask);
      ++n;
    }
    return n > 0 ? sum / n : kNaN;
  };
  const double before = retrieval(params0);
  const double after = retrieval(result.params);

  save_encoder(dir / "encoder", result.params);
  std::string curve = "epoch,loss\n";
  for (std::size_t e = 0; e < result.loss_curve.size(); ++e) {
    curve += std::to_string(e + 1) + "," + format_csv_value(result.loss_curve[e]) + "\n";
  }
  write_text_atomic(dir / "loss_curve.csv", curve);
  ordered_json summary = {{"train_pairs", n_train},
                          {"heldout_pairs", heldout.size()},
                          {"skipped_pairs", result.skipped_pairs},
                          {"epochs", result.loss_curve.size()},
                          {"first_epoch_loss", result.loss_curve.empty() ? onum(kNaN) : onum(result.loss_curve.front())},
                          {"final_epoch_loss", result.loss_curve.empty() ? onum(kNaN) : onum(result.loss_curve.back())},
                          {"heldout_retrieval_before", onum(before)},
                          {"heldout_retrieval_after", onum(after)}};
  write_text_atomic(dir / "summary.json", summary.dump(2) + "\n");
}

void stage_featurize(const RunConfig& cfg) {
  cfg.Validate();
  const Manifest manifest = load_manifest(cfg);
  const auto s = static_cast<std::size_t>(cfg.stimuli);
  const auto models = models_to_featurize(cfg);

  auto store = [&](const std::string& model, const std::string& layer, const Eigen::MatrixXd& m) {
    write_tensor(feature_path(cfg, model, layer), Tensor::FromMatrix(model + "/" + layer, m));
  };
  auto to_matrix = [](const std::vector<std::vector<double>>& rows) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()),
                      static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t j = 0; j < rows[i].size(); ++j) {
        m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
      }
    }
    return m;
  };

  const bool need_renders =
      std::find(models.begin(), models.end(), "grnn") != models.end() ||
      std::find(models.begin(), models.end(), "pixels") != models.end();
  std::vector<RenderedView> views;
  if (need_renders) {
    views.resize(s);
    parallel_for(s, cfg.threads, [&](std::size_t i) {
      const SyntheticScene scene = synth_scene(manifest.stimulus_seeds[i], cfg.scene);
      views[i] = render_depth(scene, scene.cameras[0]);
    });
  }
  const CameraIntrinsics k = CameraIntrinsics::FromHorizontalFov(
      cfg.scene.image_width, cfg.scene.image_height, cfg.scene.hfov_degrees);

  for (const auto& model : models) {
    if (model == "grnn") {
      const EncoderParams params = load_encoder(cfg.out_dir / "train" / "encoder");
      std::vector<GrnnLayers> feats(s);
      parallel_for(s, cfg.threads, [&](std::size_t i) {
        feats[i] = grnn_both(views[i].rgb, views[i].depth, k, params, cfg.grid_dims, cfg.pool_blocks);
      });
      for (const auto& layer : cfg.grnn_layers) {
        std::vector<std::vector<double>> rows(s);
        for (std::size_t i = 0; i < s; ++i) rows[i] = layer == "conv1" ? feats[i].conv1 : feats[i].conv2;
        store(model, layer, to_matrix(rows));
      }
    } else if (model == "pixels") {
      std::vector<std::vector<double>> rows(s);
      parallel_for(s, cfg.threads, [&](std::size_t i) { rows[i] = pixel_features(views[i].rgb); });
      store(model, "rgb8", to_matrix(rows));
    } else if (model == "random") {
      Rng rng(cfg.Seed("random_features"));
      Eigen::MatrixXd m(static_cast<Eigen::Index>(s), cfg.random_features);
      for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.Normal();
      store(model, "gaussian", m);
    } else {
      const auto it = std::find_if(cfg.external_models.begin(), cfg.external_models.end(),
                                   [&](const ExternalModel& e) { return e.name == model; });
      if (it == cfg.external_models.end()) throw InputError("unknown model '" + model + "'");
      for (const auto& [layer, path] : it->layers) {
        const Tensor t = read_tensor(path);
        if (t.shape.size() != 2 || t.shape[0] != s) {
          throw InputError("external features " + model + "/" + layer +
                           " must be a stimuli x features matrix with " + std::to_string(s) +
                           " rows");
        }
        Eigen::MatrixXd m = t.ToMatrix();
        if (!m.allFinite()) throw InputError("external features " + model + "/" + layer + " contain non-finite values");
        store(model, layer, m);
      }
    }
  }
}

void stage_encode(const RunConfig& cfg) {
  cfg.Validate();
  const auto subjects = subject_names(cfg);
  const auto s = static_cast<std::size_t>(cfg.stimuli);
  const int voxels = cfg.responses.voxels;

  std::map<std::pair<std::string, std::string>, Eigen::MatrixXd> features;
  for (const auto& model : models_to_featurize(cfg)) {
    for (const auto& layer : cfg.LayersOf(model)) features[{model, layer}] = load_features(cfg, model, layer);
  }

  struct SubjectData {
    ResponseMatrix responses;
    std::vector<double> nc;
    TrainTestSplit split;
    SplitConfig folds;
  };
  std::vector<SubjectData> data(subjects.size());

  for (std::size_t si = 0; si < subjects.size(); ++si) {
    const std::string& name = subjects[si];
    const RoiAtlas atlas = synth_atlas(voxels, cfg.Seed("atlas/" + name));
    const auto& roi_names = stream_roi_names();

    // Which source drives each ROI id.
    std::map<int, std::size_t> roi_source;
    std::size_t fallback = cfg.responses.sources.size();
    for (std::size_t k = 0; k < cfg.responses.sources.size(); ++k) {
      const auto& src = cfg.responses.sources[k];
      if (src.rois.empty()) {
        if (fallback == cfg.responses.sources.size()) fallback = k;
        continue;
      }
      for (const auto& roi : src.rois) {
        const auto pos = std::find(roi_names.begin(), roi_names.end(), roi) - roi_names.begin();
        roi_source.emplace(static_cast<int>(pos) + 1, k);
      }
    }

    RepeatArray trials(s, static_cast<std::size_t>(voxels),
                       static_cast<std::size_t>(cfg.responses.repeats));
    Eigen::MatrixXd signal = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(s), voxels);
    for (std::size_t k = 0; k < cfg.responses.sources.size(); ++k) {
      const auto& src = cfg.responses.sources[k];
      FeatureMatrix fm{features.at({src.model, src.layer}), src.model, src.layer};
      const SyntheticResponses syn =
          synth_responses(fm, voxels, cfg.responses.noise_level, cfg.responses.repeats,
                          cfg.Seed("responses/" + name + "/" + std::to_string(k)),
                          cfg.responses.subset_size);
      for (int v = 0; v < voxels; ++v) {
        const int label = atlas.labels[static_cast<std::size_t>(v)];
        const auto it = roi_source.find(label);
        const std::size_t owner = it != roi_source.end() ? it->second : fallback;
        if (owner != k) continue;
        signal.col(v) = syn.signal.col(v);
        for (std::size_t st = 0; st < s; ++st)
          for (std::size_t t = 0; t < trials.trials(); ++t)
            trials.at(st, static_cast<std::size_t>(v), t) =
                syn.responses.repeats.at(st, static_cast<std::size_t>(v), t);
      }
    }
    SubjectData& d = data[si];
    d.responses.values = trials.TrialMean();
    d.responses.repeats = std::move(trials);
    d.nc = estimate_noise_ceiling(d.responses.repeats);
    d.split = make_train_test_split(s, cfg.split.train_fraction, cfg.Seed("split/" + name));
    d.folds = cfg.split;
    d.folds.seed = cfg.Seed("folds/" + name);

    const fs::path rdir = cfg.out_dir / "responses" / name;
    write_tensor(rdir / "trials",
                 Tensor::FromF64("trials", {s, static_cast<std::size_t>(voxels), d.responses.repeats.trials()},
                                 d.responses.repeats.data()));
    write_tensor(rdir / "signal", Tensor::FromMatrix("signal", signal));
    std::vector<std::int32_t> labels(atlas.labels.begin(), atlas.labels.end());
    write_tensor(rdir / "atlas", Tensor::FromI32("atlas", {labels.size()}, labels));
    ordered_json names = ordered_json::object();
    for (const auto& [id, roi] : atlas.names) names[std::to_string(id)] = roi;
    write_text_atomic(rdir / "roi_names.json", ordered_json{{"names", names}}.dump(2) + "\n");

    const fs::path edir = cfg.out_dir / "encode" / name;
    write_tensor(edir / "nc", Tensor::FromF64("nc", {d.nc.size()}, d.nc));
    write_text_atomic(edir / "split.json",
                      ordered_json{{"train", d.split.train}, {"test", d.split.test}}.dump() + "\n");
  }

  struct Job {
    std::size_t subject;
    std::string model;
    std::string layer;
  };
  std::vector<Job> jobs;
  for (std::size_t si = 0; si < subjects.size(); ++si)
    for (const auto& model : cfg.models)
      for (const auto& layer : cfg.LayersOf(model)) jobs.push_back({si, model, layer});

  std::vector<EncodingResult> results(jobs.size());
  parallel_for(jobs.size(), cfg.threads, [&](std::size_t j) {
    const Job& job = jobs[j];
    const SubjectData& d = data[job.subject];
    results[j] = run_encoding(features.at({job.model, job.layer}), d.responses.values, d.split,
                              cfg.pca_components, d.folds);
  });

  for (std::size_t j = 0; j < jobs.size(); ++j) {
    const EncodingResult& r = results[j];
    const auto v = static_cast<std::size_t>(voxels);
    std::vector<double> metrics(v * 4);
    for (std::size_t i = 0; i < v; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      metrics[i * 4 + 0] = r.cv_score(ii);
      metrics[i * 4 + 1] = r.test_r(ii);
      metrics[i * 4 + 2] = r.test_r2(ii);
      metrics[i * 4 + 3] = r.lambda_per_voxel[i];
    }
    const fs::path mdir = cfg.out_dir / "encode" / subjects[jobs[j].subject] / jobs[j].model / jobs[j].layer;
    write_tensor(mdir / "metrics", Tensor::FromF64("metrics", {v, 4}, metrics));
    write_text_atomic(mdir / "info.json",
                      ordered_json{{"columns", {"cv_r2", "test_r", "test_r2", "lambda"}},
                                   {"pca_components", r.pca_components}}
                              .dump(2) + "\n");
  }
}

void stage_stats(const RunConfig& cfg) {
  cfg.Validate();
  const auto subjects = subject_names(cfg);
  const auto comparisons = cfg.Comparisons();
  const fs::path dir = cfg.out_dir / "stats";

  std::vector<ReportRow> rows;
  ordered_json entries = ordered_json::array();
  // best-layer ROI-mean r2_nc per (roi, model), one slot per subject.
  std::map<std::pair<std::string, std::string>, std::vector<double>> roi_scores;
  std::vector<std::string> roi_list;

  for (std::size_t si = 0; si < subjects.size(); ++si) {
    const std::string& name = subjects[si];
    const fs::path rdir = cfg.out_dir / "responses" / name;
    RoiAtlas atlas;
    for (double label : read_tensor(rdir / "atlas").ToF64()) atlas.labels.push_back(static_cast<int>(label));
    const json roi_names = read_json(rdir / "roi_names.json");
    for (const auto& [id, roi] : roi_names.at("names").items()) {
      atlas.names[std::stoi(id)] = roi.get<std::string>();
    }
    atlas.Validate();
    if (roi_list.empty()) {
      for (const auto& [id, roi] : atlas.names) roi_list.push_back(roi);
    }

    const std::vector<double> nc = read_tensor(cfg.out_dir / "encode" / name / "nc").ToF64();
    if (nc.size() != atlas.labels.size()) throw InputError("noise ceiling and atlas sizes differ for " + name);
    const std::vector<std::uint8_t> include = filter_voxels(nc, cfg.nc_threshold);
    const std::size_t v = nc.size();

    // Per voxel best-layer r2_nc for each model, for the difference maps.
    std::map<std::string, std::vector<double>> voxel_best;

    for (const auto& model : cfg.models) {
      const auto layers = cfg.LayersOf(model);
      std::vector<LayerMetrics> lm(layers.size());
      for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto m = read_tensor(cfg.out_dir / "encode" / name / model / layers[l] / "metrics").ToF64();
        if (m.size() != v * 4) throw InputError("metrics size mismatch for " + model + "/" + layers[l]);
        for (std::size_t i = 0; i < v; ++i) {
          lm[l].cv.push_back(m[i * 4 + 0]);
          lm[l].r.push_back(m[i * 4 + 1]);
          lm[l].r2.push_back(m[i * 4 + 2]);
          lm[l].lambda.push_back(m[i * 4 + 3]);
          const double r2 = m[i * 4 + 2];
          lm[l].r2_nc.push_back(std::isfinite(r2) && nc[i] > 0.0 ? noise_corrected_r2(r2, nc[i]) : kNaN);
        }
      }
      auto& best_map = voxel_best[model];
      best_map.assign(v, kNaN);

      for (const auto& [roi_id, roi] : atlas.names) {
        std::vector<double> cv_means(layers.size()), test_means(layers.size());
        for (std::size_t l = 0; l < layers.size(); ++l) {
          cv_means[l] = masked_roi_mean(lm[l].cv, include, atlas, roi_id);
          test_means[l] = masked_roi_mean(lm[l].r2_nc, include, atlas, roi_id);
        }
        auto& slot = roi_scores[{roi, model}];
        slot.resize(subjects.size(), kNaN);
        const bool any = std::any_of(cv_means.begin(), cv_means.end(), [](double x) { return std::isfinite(x); });
        if (!any) {
          entries.push_back({{"subject", name}, {"roi", roi}, {"model", model}, {"status", "no included voxels"}});
          continue;
        }
        const std::size_t best = best_layer(cv_means);
        const std::size_t best_test = best_layer(test_means);
        const LayerMetrics& b = lm[best];
        const double r = masked_roi_mean(b.r, include, atlas, roi_id);
        const double r2 = masked_roi_mean(b.r2, include, atlas, roi_id);
        const double ncm = masked_roi_mean(nc, include, atlas, roi_id);
        const double r2nc = test_means[best];
        slot[si] = r2nc;
        for (std::size_t i = 0; i < v; ++i) {
          if (atlas.labels[i] == roi_id) best_map[i] = b.r2_nc[i];
        }
        const std::string& layer = layers[best];
        rows.push_back({name, roi, model, layer, "r", r});
        rows.push_back({name, roi, model, layer, "r2", r2});
        rows.push_back({name, roi, model, layer, "nc", 100.0 * ncm});
        rows.push_back({name, roi, model, layer, "r2_nc", r2nc});

        ordered_json per_layer = ordered_json::array();
        for (std::size_t l = 0; l < layers.size(); ++l) {
          per_layer.push_back({{"layer", layers[l]}, {"cv_r2", onum(cv_means[l])}, {"test_r2_nc", onum(test_means[l])}});
        }
        entries.push_back({{"subject", name},
                           {"roi", roi},
                           {"model", model},
                           {"status", "ok"},
                           {"best_layer", layer},
                           {"best_layer_on_test", layers[best_test]},
                           {"layers", per_layer}});
      }
    }

    for (const auto& [a, b] : comparisons) {
      const auto diff = difference_map(voxel_best.at(a), voxel_best.at(b), include);
      write_tensor(dir / "difference" / name / comparison_label(a, b),
                   Tensor::FromF64(comparison_label(a, b), {diff.size()}, diff));
    }
  }

  ordered_json tests = ordered_json::array();
  for (const auto& roi : roi_list) {
    for (const auto& [a, b] : comparisons) {
      const auto& sa = roi_scores[{roi, a}];
      const auto& sb = roi_scores[{roi, b}];
      std::vector<double> xa, xb;
      for (std::size_t i = 0; i < subjects.size(); ++i) {
        if (i < sa.size() && i < sb.size() && std::isfinite(sa[i]) && std::isfinite(sb[i])) {
          xa.push_back(sa[i]);
          xb.push_back(sb[i]);
        }
      }
      double t = kNaN, p = kNaN;
      std::string status = "ok";
      try {
        const TestResult res = paired_t_test(xa, xb);
        t = res.t;
        p = res.p;
      } catch (const DegenerateTestError&) {
        status = "zero variance of differences";
      } catch (const InputError&) {
        status = "fewer than two subjects";
      }
      const std::string label = comparison_label(a, b);
      rows.push_back({"all", roi, label, "best", "t", t});
      rows.push_back({"all", roi, label, "best", "p", p});
      tests.push_back({{"roi", roi}, {"model_a", a}, {"model_b", b}, {"n", xa.size()},
                       {"t", onum(t)}, {"p", onum(p)}, {"status", status}});
    }
  }

  sort_report_rows(rows);
  ordered_json jrows = ordered_json::array();
  for (const auto& row : rows) {
    jrows.push_back({{"subject", row.subject}, {"roi", row.roi}, {"model", row.model},
                     {"layer", row.layer}, {"metric", row.metric}, {"value", onum(row.value)}});
  }
  ordered_json summary = {{"subjects", subjects}, {"rois", roi_list}, {"nc_threshold", cfg.nc_threshold},
                          {"entries", entries}, {"tests", tests}, {"rows", jrows}};
  write_text_atomic(dir / "summary.json", summary.dump(2) + "\n");
}

void stage_report(const RunConfig& cfg) {
  cfg.Validate();
  const json summary = read_json(cfg.out_dir / "stats" / "summary.json");
  std::vector<ReportRow> rows;
  for (const auto& r : summary.at("rows")) {
    rows.push_back({r.at("subject").get<std::string>(), r.at("roi").get<std::string>(),
                    r.at("model").get<std::string>(), r.at("layer").get<std::string>(),
                    r.at("metric").get<std::string>(), from_num(r.at("value"))});
  }
  sort_report_rows(rows);
  const fs::path dir = cfg.out_dir / "report";
  write_text_atomic(dir / "report.csv", report_csv(rows));

  ordered_json jrows = ordered_json::array();
  for (const auto& row : rows) {
    jrows.push_back({{"subject", row.subject}, {"roi", row.roi}, {"model", row.model},
                     {"layer", row.layer}, {"metric", row.metric}, {"value", onum(row.value)}});
  }
  ordered_json report = {{"columns", {"subject", "roi", "model", "layer", "metric", "value"}},
                         {"rows", jrows},
                         {"tests", ordered_json::parse(summary.at("tests").dump())},
                         {"layer_selection", ordered_json::parse(summary.at("entries").dump())}};
  const fs::path train_summary = cfg.out_dir / "train" / "summary.json";
  if (fs::exists(train_summary)) report["training"] = ordered_json::parse(read_json(train_summary).dump());
  write_text_atomic(dir / "report.json", report.dump(2) + "\n");
}

void run_pipeline(const RunConfig& cfg) {
  for (std::string_view stage : {"synth", "train", "featurize", "encode", "stats", "report"}) {
    run_stage(stage, cfg);
  }
}

void run_stage(std::string_view stage, const RunConfig& cfg) {
  if (stage == "run") {
    run_pipeline(cfg);
    return;
  }
  void (*fn)(const RunConfig&) = nullptr;
  if (stage == "synth") fn = stage_synth;
  else if (stage == "train") fn = stage_train;
  else if (stage == "featurize") fn = stage_featurize;
  else if (stage == "encode") fn = stage_encode;
  else if (stage == "stats") fn = stage_stats;
  else if (stage == "report") fn = stage_report;
  else throw StageError("cli", "unknown stage '" + std::string(stage) + "'");
  try {
    fn(cfg);
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(std::string(stage), e.what());
  }
}

}  // namespace geovoxel
