#include "geovoxel/responses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "geovoxel/error.hpp"
#include "geovoxel/random.hpp"

namespace geovoxel {

SyntheticResponses synth_responses(const FeatureMatrix& features, int voxels, double noise_level,
                                   int repeats, std::uint64_t seed, int subset_size) {
  features.Validate();
  if (voxels < 1) throw InputError("need at least one voxel");
  if (repeats < 1) throw InputError("need at least one repeat");
  if (!(noise_level >= 0.0) || !std::isfinite(noise_level)) {
    throw InputError("noise_level must be finite and >= 0");
  }
  const Eigen::MatrixXd& x = features.values;
  const Eigen::Index s = x.rows();
  const Eigen::Index f = x.cols();
  const int m = subset_size > 0 ? std::min<int>(subset_size, static_cast<int>(f))
                                : std::min<int>(8, static_cast<int>(f));

  const Eigen::RowVectorXd mean = x.colwise().mean();
  Eigen::RowVectorXd sd(f);
  for (Eigen::Index c = 0; c < f; ++c) {
    sd(c) = std::sqrt((x.col(c).array() - mean(c)).square().sum() / static_cast<double>(s - 1));
  }

  Rng rng(seed);
  SyntheticResponses out;
  out.signal.resize(s, voxels);
  out.true_weights = Eigen::MatrixXd::Zero(f, voxels);
  out.true_intercept = Eigen::RowVectorXd::Zero(voxels);
  std::vector<std::size_t> pool(static_cast<std::size_t>(f));

  for (int v = 0; v < voxels; ++v) {
    // Partial Fisher-Yates for a random subset.
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (int i = 0; i < m; ++i) {
      const auto j = static_cast<std::size_t>(i) +
                     static_cast<std::size_t>(rng.Below(pool.size() - static_cast<std::size_t>(i)));
      std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
    }
    std::vector<std::size_t> subset(pool.begin(), pool.begin() + m);
    std::sort(subset.begin(), subset.end());

    Eigen::VectorXd raw_w = Eigen::VectorXd::Zero(f);
    for (std::size_t c : subset) {
      const double w = rng.Normal();
      const auto ci = static_cast<Eigen::Index>(c);
      if (sd(ci) > 0.0) raw_w(ci) = w / sd(ci);
    }
    Eigen::VectorXd y = x * raw_w;
    double intercept = -mean.dot(raw_w);
    y.array() += intercept;
    const double y_sd = std::sqrt(y.squaredNorm() / static_cast<double>(s - 1));
    if (y_sd > 0.0) {
      y /= y_sd;
      raw_w /= y_sd;
      intercept /= y_sd;
    }
    out.signal.col(v) = y;
    out.true_weights.col(v) = raw_w;
    out.true_intercept(v) = intercept;
    out.readout_features.push_back(std::move(subset));
  }

  RepeatArray trials(static_cast<std::size_t>(s), static_cast<std::size_t>(voxels),
                     static_cast<std::size_t>(repeats));
  for (Eigen::Index st = 0; st < s; ++st) {
    for (int v = 0; v < voxels; ++v) {
      for (int t = 0; t < repeats; ++t) {
        trials.at(static_cast<std::size_t>(st), static_cast<std::size_t>(v),
                  static_cast<std::size_t>(t)) =
            out.signal(st, v) + (noise_level > 0.0 ? noise_level * rng.Normal() : 0.0);
      }
    }
  }
  out.responses.values = trials.TrialMean();
  out.responses.repeats = std::move(trials);
  return out;
}

const std::vector<std::string>& stream_roi_names() {
  static const std::vector<std::string> names = {"early",   "midventral", "midlateral",
                                                 "midparietal", "ventral", "lateral",
                                                 "parietal"};
  return names;
}

RoiAtlas synth_atlas(int voxels, std::uint64_t seed) {
  if (voxels < 0) throw InputError("voxel count must be >= 0");
  RoiAtlas atlas;
  const auto& names = stream_roi_names();
  for (std::size_t i = 0; i < names.size(); ++i) atlas.names[static_cast<int>(i) + 1] = names[i];

  std::vector<std::size_t> order(static_cast<std::size_t>(voxels));
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[static_cast<std::size_t>(rng.Below(i))]);
  }
  atlas.labels.assign(static_cast<std::size_t>(voxels), 0);
  for (std::size_t i = 0; i < order.size(); ++i) {
    atlas.labels[order[i]] = static_cast<int>(i % names.size()) + 1;
  }
  return atlas;
}

}  // namespace geovoxel
