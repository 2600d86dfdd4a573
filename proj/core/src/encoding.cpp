#include "geovoxel/encoding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/SVD>

#include "geovoxel/error.hpp"
#include "geovoxel/random.hpp"

namespace geovoxel {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string Shape(Eigen::Index r, Eigen::Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

// R^2 of one column, or NaN when the target is constant.
double ColumnR2(const Eigen::Ref<const Eigen::VectorXd>& y,
                const Eigen::Ref<const Eigen::VectorXd>& y_hat) {
  const double mean = y.mean();
  const double ss_tot = (y.array() - mean).square().sum();
  if (ss_tot == 0.0) return kNaN;
  return 1.0 - (y - y_hat).squaredNorm() / ss_tot;
}

}  // namespace

void FeatureMatrix::Validate() const {
  if (values.rows() < 2) throw InputError("feature matrix needs at least two stimuli");
  if (values.cols() < 1) throw InputError("feature matrix needs at least one feature");
  if (!values.allFinite()) throw InputError("feature matrix contains non-finite values");
}

Eigen::MatrixXd RepeatArray::TrialMean() const {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(stimuli_), static_cast<Eigen::Index>(voxels_));
  for (std::size_t s = 0; s < stimuli_; ++s) {
    for (std::size_t v = 0; v < voxels_; ++v) {
      double sum = 0.0;
      for (std::size_t t = 0; t < trials_; ++t) sum += at(s, v, t);
      m(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(v)) =
          trials_ > 0 ? sum / static_cast<double>(trials_) : 0.0;
    }
  }
  return m;
}

PcaModel fit_pca(const Eigen::MatrixXd& x, std::size_t k) {
  const auto s = static_cast<std::size_t>(x.rows());
  const auto f = static_cast<std::size_t>(x.cols());
  if (s < 2) throw InputError("PCA needs at least two rows");
  if (k < 1 || k > std::min(s - 1, f)) {
    throw InputError("PCA with " + std::to_string(k) + " components needs 1 <= K <= min(S-1, F) = " +
                     std::to_string(std::min(s - 1, f)));
  }
  PcaModel model;
  model.mean = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - model.mean;
  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const auto kk = static_cast<Eigen::Index>(k);
  model.components = svd.matrixV().leftCols(kk).transpose();
  for (Eigen::Index r = 0; r < kk; ++r) {
    Eigen::Index arg = 0;
    model.components.row(r).cwiseAbs().maxCoeff(&arg);
    if (model.components(r, arg) < 0.0) model.components.row(r) *= -1.0;
  }
  model.explained_variance =
      svd.singularValues().head(kk).array().square() / static_cast<double>(s - 1);
  return model;
}

std::size_t centered_rank(const Eigen::MatrixXd& x, double relative_tolerance) {
  if (x.rows() < 2 || x.cols() < 1) return 0;
  const Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv(0) == 0.0) return 0;
  std::size_t rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > relative_tolerance * sv(0)) ++rank;
  }
  return rank;
}

Eigen::MatrixXd pca_project(const PcaModel& model, const Eigen::MatrixXd& x) {
  if (x.cols() != model.mean.cols()) {
    throw InputError("PCA model expects " + std::to_string(model.mean.cols()) +
                     " features, got " + std::to_string(x.cols()));
  }
  return (x.rowwise() - model.mean) * model.components.transpose();
}

RidgePath ridge_path_fit(const Eigen::MatrixXd& x_train, const Eigen::MatrixXd& y_train,
                         std::span<const double> lambda_grid) {
  if (x_train.rows() != y_train.rows()) {
    throw InputError("design " + Shape(x_train.rows(), x_train.cols()) + " and targets " +
                     Shape(y_train.rows(), y_train.cols()) + " differ in rows");
  }
  if (x_train.rows() < 2) throw InputError("ridge regression needs at least two rows");
  if (lambda_grid.empty()) throw InputError("lambda grid is empty");
  for (double l : lambda_grid) {
    if (!(l >= 0.0) || !std::isfinite(l)) throw InputError("lambda values must be finite and >= 0");
  }

  const Eigen::RowVectorXd x_mean = x_train.colwise().mean();
  const Eigen::RowVectorXd y_mean = y_train.colwise().mean();
  const Eigen::MatrixXd xc = x_train.rowwise() - x_mean;
  const Eigen::MatrixXd yc = y_train.rowwise() - y_mean;

  Eigen::BDCSVD<Eigen::MatrixXd> svd(xc, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  const double s_max = sv.size() > 0 ? sv(0) : 0.0;
  const double tol = s_max * static_cast<double>(std::max(xc.rows(), xc.cols())) *
                     std::numeric_limits<double>::epsilon();
  const Eigen::MatrixXd uty = svd.matrixU().transpose() * yc;

  RidgePath path;
  for (double lambda : lambda_grid) {
    if (lambda == 0.0 && s_max == 0.0) {
      throw SingularityError("unregularized ridge on a design with zero variance");
    }
    Eigen::VectorXd shrink(sv.size());
    for (Eigen::Index i = 0; i < sv.size(); ++i) {
      const double s = sv(i);
      shrink(i) = (lambda == 0.0 && s <= tol) ? 0.0 : s / (s * s + lambda);
    }
    Eigen::MatrixXd w = svd.matrixV() * (shrink.asDiagonal() * uty);
    path.lambdas.push_back(lambda);
    path.intercepts.push_back(y_mean - x_mean * w);
    path.weights.push_back(std::move(w));
  }
  return path;
}

std::vector<double> SplitConfig::DefaultLambdaGrid() {
  std::vector<double> grid(10);
  for (int i = 0; i < 10; ++i) grid[static_cast<std::size_t>(i)] = std::pow(10.0, -3.0 + 8.0 * i / 9.0);
  return grid;
}

void SplitConfig::Validate() const {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw InputError("train_fraction must be in (0, 1)");
  }
  if (cv_folds < 2) throw InputError("cv_folds must be >= 2");
  if (lambda_grid.empty()) throw InputError("lambda_grid must not be empty");
  for (std::size_t i = 0; i < lambda_grid.size(); ++i) {
    if (!(lambda_grid[i] >= 0.0) || !std::isfinite(lambda_grid[i])) {
      throw InputError("lambda_grid values must be finite and >= 0");
    }
    if (i > 0 && !(lambda_grid[i] > lambda_grid[i - 1])) {
      throw InputError("lambda_grid must be sorted ascending without duplicates");
    }
  }
}

std::vector<int> make_folds(std::size_t rows, int folds, std::uint64_t seed) {
  if (folds < 2) throw InputError("need at least two folds");
  if (rows < static_cast<std::size_t>(folds)) {
    throw InputError(std::to_string(rows) + " rows cannot be split into " +
                     std::to_string(folds) + " folds");
  }
  std::vector<std::size_t> perm(rows);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = rows; i > 1; --i) {
    std::swap(perm[i - 1], perm[static_cast<std::size_t>(rng.Below(i))]);
  }
  std::vector<int> fold_of(rows, 0);
  const std::size_t base = rows / static_cast<std::size_t>(folds);
  const std::size_t extra = rows % static_cast<std::size_t>(folds);
  std::size_t pos = 0;
  for (int f = 0; f < folds; ++f) {
    const std::size_t size = base + (static_cast<std::size_t>(f) < extra ? 1 : 0);
    for (std::size_t i = 0; i < size; ++i) fold_of[perm[pos++]] = f;
  }
  return fold_of;
}

Eigen::MatrixXd select_rows(const Eigen::MatrixXd& m, std::span<const std::size_t> rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

LambdaSelection cv_select_lambda(const Eigen::MatrixXd& x_train, const Eigen::MatrixXd& y_train,
                                 const SplitConfig& cfg) {
  cfg.Validate();
  if (x_train.rows() != y_train.rows()) throw InputError("design and targets differ in rows");
  const auto rows = static_cast<std::size_t>(x_train.rows());
  const auto fold_of = make_folds(rows, cfg.cv_folds, cfg.seed);
  const auto num_lambda = static_cast<Eigen::Index>(cfg.lambda_grid.size());
  const Eigen::Index v = y_train.cols();

  Eigen::MatrixXd score_sum = Eigen::MatrixXd::Zero(num_lambda, v);
  Eigen::MatrixXi score_count = Eigen::MatrixXi::Zero(num_lambda, v);
  for (int f = 0; f < cfg.cv_folds; ++f) {
    std::vector<std::size_t> fit_rows;
    std::vector<std::size_t> held_rows;
    for (std::size_t r = 0; r < rows; ++r) (fold_of[r] == f ? held_rows : fit_rows).push_back(r);
    const Eigen::MatrixXd x_held = select_rows(x_train, held_rows);
    const Eigen::MatrixXd y_held = select_rows(y_train, held_rows);
    const RidgePath path =
        ridge_path_fit(select_rows(x_train, fit_rows), select_rows(y_train, fit_rows),
                       cfg.lambda_grid);
    for (Eigen::Index l = 0; l < num_lambda; ++l) {
      const auto li = static_cast<std::size_t>(l);
      const Eigen::MatrixXd pred = (x_held * path.weights[li]).rowwise() + path.intercepts[li];
      for (Eigen::Index c = 0; c < v; ++c) {
        const double r2 = ColumnR2(y_held.col(c), pred.col(c));
        if (std::isnan(r2)) continue;
        score_sum(l, c) += r2;
        score_count(l, c) += 1;
      }
    }
  }

  LambdaSelection sel;
  sel.score_table = Eigen::MatrixXd::Constant(num_lambda, v, -std::numeric_limits<double>::infinity());
  for (Eigen::Index l = 0; l < num_lambda; ++l) {
    for (Eigen::Index c = 0; c < v; ++c) {
      if (score_count(l, c) > 0) sel.score_table(l, c) = score_sum(l, c) / score_count(l, c);
    }
  }
  sel.cv_score.resize(v);
  for (Eigen::Index c = 0; c < v; ++c) {
    Eigen::Index best = 0;
    for (Eigen::Index l = 1; l < num_lambda; ++l) {
      if (sel.score_table(l, c) > sel.score_table(best, c)) best = l;
    }
    sel.lambda_index.push_back(static_cast<std::size_t>(best));
    sel.lambda_per_voxel.push_back(cfg.lambda_grid[static_cast<std::size_t>(best)]);
    sel.cv_score(c) = sel.score_table(best, c);
  }
  return sel;
}

RidgeFit fit_ridge_cv(const Eigen::MatrixXd& x_train, const Eigen::MatrixXd& y_train,
                      const SplitConfig& cfg) {
  const LambdaSelection sel = cv_select_lambda(x_train, y_train, cfg);
  const RidgePath path = ridge_path_fit(x_train, y_train, cfg.lambda_grid);
  RidgeFit fit;
  fit.weights.resize(x_train.cols(), y_train.cols());
  fit.intercept.resize(y_train.cols());
  for (Eigen::Index c = 0; c < y_train.cols(); ++c) {
    const std::size_t l = sel.lambda_index[static_cast<std::size_t>(c)];
    fit.weights.col(c) = path.weights[l].col(c);
    fit.intercept(c) = path.intercepts[l](c);
  }
  fit.lambda_per_voxel = sel.lambda_per_voxel;
  fit.cv_score = sel.cv_score;
  return fit;
}

Eigen::MatrixXd predict(const RidgeFit& fit, const Eigen::MatrixXd& x) {
  if (x.cols() != fit.weights.rows()) {
    throw InputError("ridge fit expects " + std::to_string(fit.weights.rows()) +
                     " features, got " + std::to_string(x.cols()));
  }
  return (x * fit.weights).rowwise() + fit.intercept;
}

double pearson_r(std::span<const double> y, std::span<const double> y_hat) {
  if (y.size() != y_hat.size()) throw UndefinedMetricError("pearson_r: length mismatch");
  if (y.size() < 2) throw UndefinedMetricError("pearson_r: need at least two values");
  const double n = static_cast<double>(y.size());
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  const double mh = std::accumulate(y_hat.begin(), y_hat.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double a = y[i] - my;
    const double b = y_hat[i] - mh;
    sxy += a * b;
    sxx += a * a;
    syy += b * b;
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedMetricError("pearson_r: constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double r_squared(std::span<const double> y, std::span<const double> y_hat) {
  if (y.size() != y_hat.size()) throw UndefinedMetricError("r_squared: length mismatch");
  if (y.size() < 2) throw UndefinedMetricError("r_squared: need at least two values");
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  double ss_res = 0.0;
  double ss_tot = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    ss_res += (y[i] - y_hat[i]) * (y[i] - y_hat[i]);
    ss_tot += (y[i] - mean) * (y[i] - mean);
  }
  if (ss_tot == 0.0) throw UndefinedMetricError("r_squared: constant target");
  return 1.0 - ss_res / ss_tot;
}

std::vector<double> estimate_noise_ceiling(const RepeatArray& repeats) {
  const std::size_t s = repeats.stimuli();
  const std::size_t v = repeats.voxels();
  const std::size_t t = repeats.trials();
  if (t < 2) throw InputError("noise ceiling needs at least two trials per stimulus");
  if (s < 2) throw InputError("noise ceiling needs at least two stimuli");
  const double tt = static_cast<double>(t);

  std::vector<double> nc(v, 0.0);
  std::vector<double> means(s);
  for (std::size_t vox = 0; vox < v; ++vox) {
    double noise_var = 0.0;
    for (std::size_t st = 0; st < s; ++st) {
      double m = 0.0;
      for (std::size_t tr = 0; tr < t; ++tr) m += repeats.at(st, vox, tr);
      m /= tt;
      double ss = 0.0;
      for (std::size_t tr = 0; tr < t; ++tr) {
        const double d = repeats.at(st, vox, tr) - m;
        ss += d * d;
      }
      noise_var += ss / (tt - 1.0);
      means[st] = m;
    }
    noise_var /= static_cast<double>(s);

    const double grand = std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(s);
    double mean_var = 0.0;
    for (double m : means) mean_var += (m - grand) * (m - grand);
    mean_var /= static_cast<double>(s - 1);

    const double signal_var = std::max(0.0, mean_var - noise_var / tt);
    if (noise_var == 0.0) {
      nc[vox] = signal_var > 0.0 ? 1.0 : 0.0;
      continue;
    }
    const double snr2 = signal_var / noise_var;
    nc[vox] = snr2 / (snr2 + 1.0 / tt);
  }
  return nc;
}

double noise_corrected_r2(double r2, double nc) {
  if (!(nc > 0.0)) throw UndefinedMetricError("noise-corrected R^2 undefined for nc <= 0");
  return r2 / nc;
}

std::vector<std::uint8_t> filter_voxels(std::span<const double> nc, double threshold) {
  std::vector<std::uint8_t> mask(nc.size(), 0);
  for (std::size_t i = 0; i < nc.size(); ++i) mask[i] = nc[i] >= threshold ? 1 : 0;
  return mask;
}

TrainTestSplit make_train_test_split(std::size_t rows, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw InputError("train_fraction must be in (0, 1)");
  }
  const auto n_train =
      static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(rows)));
  if (n_train < 2 || rows - n_train < 2) {
    throw InputError("split of " + std::to_string(rows) +
                     " rows leaves fewer than two rows on one side");
  }
  std::vector<std::size_t> perm(rows);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = rows; i > 1; --i) {
    std::swap(perm[i - 1], perm[static_cast<std::size_t>(rng.Below(i))]);
  }
  TrainTestSplit split;
  split.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

EncodingResult run_encoding(const Eigen::MatrixXd& features, const Eigen::MatrixXd& responses,
                            const TrainTestSplit& split, std::size_t pca_components,
                            const SplitConfig& cfg) {
  if (features.rows() != responses.rows()) {
    throw InputError("features have " + std::to_string(features.rows()) + " stimuli, responses " +
                     std::to_string(responses.rows()));
  }
  const Eigen::MatrixXd x_train = select_rows(features, split.train);
  const Eigen::MatrixXd x_test = select_rows(features, split.test);
  const Eigen::MatrixXd y_train = select_rows(responses, split.train);
  const Eigen::MatrixXd y_test = select_rows(responses, split.test);

  const std::size_t rank = centered_rank(x_train);
  if (rank == 0) throw InputError("features have zero variance on the training stimuli");
  const std::size_t k = std::min(pca_components, rank);

  const PcaModel pca = fit_pca(x_train, k);
  const RidgeFit fit = fit_ridge_cv(pca_project(pca, x_train), y_train, cfg);
  const Eigen::MatrixXd y_hat = predict(fit, pca_project(pca, x_test));

  EncodingResult res;
  res.pca_components = k;
  res.lambda_per_voxel = fit.lambda_per_voxel;
  res.cv_score = fit.cv_score;
  res.test_r.resize(responses.cols());
  res.test_r2.resize(responses.cols());
  for (Eigen::Index c = 0; c < responses.cols(); ++c) {
    const Eigen::VectorXd y = y_test.col(c);
    const Eigen::VectorXd h = y_hat.col(c);
    const std::span<const double> ys(y.data(), static_cast<std::size_t>(y.size()));
    const std::span<const double> hs(h.data(), static_cast<std::size_t>(h.size()));
    try {
      res.test_r(c) = pearson_r(ys, hs);
    } catch (const UndefinedMetricError&) {
      res.test_r(c) = kNaN;
    }
    try {
      res.test_r2(c) = r_squared(ys, hs);
    } catch (const UndefinedMetricError&) {
      res.test_r2(c) = kNaN;
    }
  }
  return res;
}

}  // namespace geovoxel
