#include "geovoxel/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "geovoxel/error.hpp"
#include "geovoxel/random.hpp"
#include "geovoxel/responses.hpp"
#include "geovoxel/tensor_io.hpp"

namespace geovoxel {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

template <typename T>
void Read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw InputError(std::string("config field '") + key + "': " + e.what());
  }
}

void CheckKeys(const json& j, const char* where, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw InputError(std::string(where) + " must be a JSON object");
  for (const auto& item : j.items()) {
    if (!allowed.count(item.key())) {
      throw InputError(std::string("unknown field '") + item.key() + "' in " + where);
    }
  }
}

void ParseScene(const json& j, SceneSpec& s) {
  CheckKeys(j, "scene",
            {"num_spheres", "num_boxes", "image_width", "image_height", "hfov_degrees",
             "lateral_extent", "min_distance", "max_distance", "min_size", "max_size",
             "max_rotation_degrees", "max_translation", "texture_amplitude",
             "texture_frequency"});
  Read(j, "num_spheres", s.num_spheres);
  Read(j, "num_boxes", s.num_boxes);
  Read(j, "image_width", s.image_width);
  Read(j, "image_height", s.image_height);
  Read(j, "hfov_degrees", s.hfov_degrees);
  Read(j, "lateral_extent", s.lateral_extent);
  Read(j, "min_distance", s.min_distance);
  Read(j, "max_distance", s.max_distance);
  Read(j, "min_size", s.min_size);
  Read(j, "max_size", s.max_size);
  Read(j, "max_rotation_degrees", s.max_rotation_degrees);
  Read(j, "max_translation", s.max_translation);
  Read(j, "texture_amplitude", s.texture_amplitude);
  Read(j, "texture_frequency", s.texture_frequency);
}

ordered_json SceneToJson(const SceneSpec& s) {
  return ordered_json{{"num_spheres", s.num_spheres},
                      {"num_boxes", s.num_boxes},
                      {"image_width", s.image_width},
                      {"image_height", s.image_height},
                      {"hfov_degrees", s.hfov_degrees},
                      {"lateral_extent", s.lateral_extent},
                      {"min_distance", s.min_distance},
                      {"max_distance", s.max_distance},
                      {"min_size", s.min_size},
                      {"max_size", s.max_size},
                      {"max_rotation_degrees", s.max_rotation_degrees},
                      {"max_translation", s.max_translation},
                      {"texture_amplitude", s.texture_amplitude},
                      {"texture_frequency", s.texture_frequency}};
}

}  // namespace

std::uint64_t RunConfig::Seed(const std::string& stream) const {
  const auto it = seeds.find(stream);
  return it != seeds.end() ? it->second : DeriveSeed(seed, stream);
}

std::vector<std::string> RunConfig::LayersOf(const std::string& model) const {
  if (model == "grnn") return grnn_layers;
  if (model == "pixels") return {"rgb8"};
  if (model == "random") return {"gaussian"};
  for (const auto& ext : external_models) {
    if (ext.name != model) continue;
    std::vector<std::string> names;
    for (const auto& [layer, path] : ext.layers) names.push_back(layer);
    return names;
  }
  throw InputError("unknown model '" + model + "'");
}

std::vector<std::pair<std::string, std::string>> RunConfig::Comparisons() const {
  if (!comparisons.empty()) return comparisons;
  std::vector<std::pair<std::string, std::string>> pairs;
  for (std::size_t i = 0; i < models.size(); ++i) {
    for (std::size_t j = i + 1; j < models.size(); ++j) pairs.emplace_back(models[i], models[j]);
  }
  return pairs;
}

void RunConfig::Validate() const {
  if (threads < 1) throw InputError("threads must be >= 1");
  if (stimuli < 2) throw InputError("stimuli must be >= 2");
  if (train_pairs < 0 || heldout_pairs < 0) throw InputError("pair counts must be >= 0");
  if (grid_dims < 2) throw InputError("grid_dims must be >= 2");
  if (pool_blocks < 1 || pool_blocks > grid_dims) {
    throw InputError("pool_blocks must be in [1, grid_dims]");
  }
  if (scene.image_width < 1 || scene.image_height < 1) throw InputError("image size must be positive");
  if (scene.num_spheres < 0 || scene.num_boxes < 0) throw InputError("object counts must be >= 0");
  if (!(scene.texture_amplitude >= 0.0 && scene.texture_amplitude <= 1.0)) {
    throw InputError("texture_amplitude must be in [0, 1]");
  }
  contrastive.Validate();
  split.Validate();
  if (responses.subjects < 1) throw InputError("responses.subjects must be >= 1");
  if (responses.voxels < 1) throw InputError("responses.voxels must be >= 1");
  if (responses.repeats < 2) throw InputError("responses.repeats must be >= 2 for noise ceilings");
  if (!(responses.noise_level >= 0.0)) throw InputError("responses.noise_level must be >= 0");
  if (responses.sources.empty()) throw InputError("responses.sources must not be empty");
  if (!(nc_threshold >= 0.0 && nc_threshold <= 1.0)) {
    throw InputError("nc_threshold must be in [0, 1]");
  }
  if (pca_components < 1) throw InputError("pca_components must be >= 1");
  if (random_features < 1) throw InputError("random_features must be >= 1");
  if (models.empty()) throw InputError("models must not be empty");
  if (grnn_layers.empty()) throw InputError("grnn_layers must not be empty");
  for (const auto& layer : grnn_layers) {
    if (layer != "conv1" && layer != "conv2") {
      throw InputError("unknown grnn layer '" + layer + "' (expected conv1 or conv2)");
    }
  }

  std::set<std::string> seen;
  for (const auto& m : models) {
    if (!seen.insert(m).second) throw InputError("model '" + m + "' listed twice");
    LayersOf(m);
  }
  for (const auto& ext : external_models) {
    if (ext.name == "grnn" || ext.name == "pixels" || ext.name == "random") {
      throw InputError("external model name '" + ext.name + "' shadows a built-in model");
    }
    if (ext.layers.empty()) throw InputError("external model '" + ext.name + "' has no layers");
    for (const auto& [layer, path] : ext.layers) {
      for (const auto& file : {sidecar_path(path), blob_path(path)}) {
        std::ifstream probe(file, std::ios::binary);
        if (!probe) {
          throw InputError("external model '" + ext.name + "' layer '" + layer +
                           "': cannot read " + file.string());
        }
      }
    }
  }
  for (const auto& src : responses.sources) {
    const auto layers = LayersOf(src.model);
    if (std::find(layers.begin(), layers.end(), src.layer) == layers.end()) {
      throw InputError("response source layer '" + src.layer + "' not found in model '" +
                       src.model + "'");
    }
    for (const auto& roi : src.rois) {
      const auto& names = stream_roi_names();
      if (std::find(names.begin(), names.end(), roi) == names.end()) {
        throw InputError("response source names unknown ROI '" + roi + "'");
      }
    }
  }
  for (const auto& [a, b] : Comparisons()) {
    if (!seen.count(a) || !seen.count(b)) {
      throw InputError("comparison " + a + " vs " + b + " names a model not in `models`");
    }
    if (a == b) throw InputError("comparison of a model with itself");
  }
}

RunConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw InputError(std::string("config is not valid JSON: ") + e.what());
  }
  CheckKeys(j, "config",
            {"seed", "out", "threads", "scene", "stimuli", "train_pairs", "heldout_pairs",
             "grid_dims", "pool_blocks", "contrastive", "split", "responses", "models",
             "grnn_layers", "external_models", "comparisons", "nc_threshold", "pca_components",
             "random_features", "seeds"});

  RunConfig cfg;
  Read(j, "seed", cfg.seed);
  if (j.contains("out")) cfg.out_dir = j.at("out").get<std::string>();
  Read(j, "threads", cfg.threads);
  if (j.contains("scene")) ParseScene(j.at("scene"), cfg.scene);
  Read(j, "stimuli", cfg.stimuli);
  Read(j, "train_pairs", cfg.train_pairs);
  Read(j, "heldout_pairs", cfg.heldout_pairs);
  Read(j, "grid_dims", cfg.grid_dims);
  Read(j, "pool_blocks", cfg.pool_blocks);

  if (j.contains("contrastive")) {
    const json& c = j.at("contrastive");
    CheckKeys(c, "contrastive",
              {"temperature", "negatives_per_anchor", "learning_rate", "epochs"});
    Read(c, "temperature", cfg.contrastive.temperature);
    Read(c, "negatives_per_anchor", cfg.contrastive.negatives_per_anchor);
    Read(c, "learning_rate", cfg.contrastive.learning_rate);
    Read(c, "epochs", cfg.contrastive.epochs);
  }
  if (j.contains("split")) {
    const json& s = j.at("split");
    CheckKeys(s, "split", {"train_fraction", "cv_folds", "lambda_grid"});
    Read(s, "train_fraction", cfg.split.train_fraction);
    Read(s, "cv_folds", cfg.split.cv_folds);
    Read(s, "lambda_grid", cfg.split.lambda_grid);
  }
  if (j.contains("responses")) {
    const json& r = j.at("responses");
    CheckKeys(r, "responses",
              {"subjects", "voxels", "repeats", "noise_level", "subset_size", "sources"});
    Read(r, "subjects", cfg.responses.subjects);
    Read(r, "voxels", cfg.responses.voxels);
    Read(r, "repeats", cfg.responses.repeats);
    Read(r, "noise_level", cfg.responses.noise_level);
    Read(r, "subset_size", cfg.responses.subset_size);
    if (r.contains("sources")) {
      cfg.responses.sources.clear();
      for (const auto& s : r.at("sources")) {
        CheckKeys(s, "responses.sources[]", {"model", "layer", "rois"});
        ResponseSource src;
        Read(s, "model", src.model);
        Read(s, "layer", src.layer);
        Read(s, "rois", src.rois);
        cfg.responses.sources.push_back(std::move(src));
      }
    }
  }
  Read(j, "models", cfg.models);
  Read(j, "grnn_layers", cfg.grnn_layers);
  if (j.contains("external_models")) {
    for (const auto& e : j.at("external_models")) {
      CheckKeys(e, "external_models[]", {"name", "layers"});
      ExternalModel ext;
      Read(e, "name", ext.name);
      if (e.contains("layers")) {
        for (const auto& l : e.at("layers")) {
          CheckKeys(l, "external_models[].layers[]", {"name", "path"});
          ext.layers.emplace_back(l.at("name").get<std::string>(),
                                  std::filesystem::path(l.at("path").get<std::string>()));
        }
      }
      cfg.external_models.push_back(std::move(ext));
    }
  }
  if (j.contains("comparisons")) {
    for (const auto& c : j.at("comparisons")) {
      if (!c.is_array() || c.size() != 2) {
        throw InputError("each comparison must be a two-element array of model names");
      }
      cfg.comparisons.emplace_back(c[0].get<std::string>(), c[1].get<std::string>());
    }
  }
  Read(j, "nc_threshold", cfg.nc_threshold);
  Read(j, "pca_components", cfg.pca_components);
  Read(j, "random_features", cfg.random_features);
  if (j.contains("seeds")) {
    for (const auto& item : j.at("seeds").items()) {
      cfg.seeds[item.key()] = item.value().get<std::uint64_t>();
    }
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read config file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

std::string config_to_json(const RunConfig& cfg) {
  ordered_json j;
  j["seed"] = cfg.seed;
  j["out"] = cfg.out_dir.string();
  j["threads"] = cfg.threads;
  j["scene"] = SceneToJson(cfg.scene);
  j["stimuli"] = cfg.stimuli;
  j["train_pairs"] = cfg.train_pairs;
  j["heldout_pairs"] = cfg.heldout_pairs;
  j["grid_dims"] = cfg.grid_dims;
  j["pool_blocks"] = cfg.pool_blocks;
  j["contrastive"] = {{"temperature", cfg.contrastive.temperature},
                      {"negatives_per_anchor", cfg.contrastive.negatives_per_anchor},
                      {"learning_rate", cfg.contrastive.learning_rate},
                      {"epochs", cfg.contrastive.epochs}};
  j["split"] = {{"train_fraction", cfg.split.train_fraction},
                {"cv_folds", cfg.split.cv_folds},
                {"lambda_grid", cfg.split.lambda_grid}};
  ordered_json sources = ordered_json::array();
  for (const auto& s : cfg.responses.sources) {
    sources.push_back({{"model", s.model}, {"layer", s.layer}, {"rois", s.rois}});
  }
  j["responses"] = {{"subjects", cfg.responses.subjects},
                    {"voxels", cfg.responses.voxels},
                    {"repeats", cfg.responses.repeats},
                    {"noise_level", cfg.responses.noise_level},
                    {"subset_size", cfg.responses.subset_size},
                    {"sources", sources}};
  j["models"] = cfg.models;
  j["grnn_layers"] = cfg.grnn_layers;
  ordered_json ext = ordered_json::array();
  for (const auto& e : cfg.external_models) {
    ordered_json layers = ordered_json::array();
    for (const auto& [name, path] : e.layers) layers.push_back({{"name", name}, {"path", path.string()}});
    ext.push_back({{"name", e.name}, {"layers", layers}});
  }
  j["external_models"] = ext;
  ordered_json comps = ordered_json::array();
  for (const auto& [a, b] : cfg.Comparisons()) comps.push_back({a, b});
  j["comparisons"] = comps;
  j["nc_threshold"] = cfg.nc_threshold;
  j["pca_components"] = cfg.pca_components;
  j["random_features"] = cfg.random_features;
  ordered_json seeds = ordered_json::object();
  for (const auto& [name, value] : cfg.seeds) seeds[name] = value;
  j["seeds"] = seeds;
  return j.dump(2);
}

}  // namespace geovoxel
