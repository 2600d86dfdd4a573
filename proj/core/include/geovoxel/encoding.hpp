#ifndef GEOVOXEL_ENCODING_HPP
#define GEOVOXEL_ENCODING_HPP

// Voxelwise encoding models: PCA feature reduction, ridge regression with a
// per-voxel cross-validated penalty, prediction metrics and noise ceilings.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace geovoxel {

// Stimuli x features.
struct FeatureMatrix {
  Eigen::MatrixXd values;
  std::string model_id;
  std::string layer_id;

  void Validate() const;
};

// Trial responses, stimulus-major: at(s, v, t).
class RepeatArray {
 public:
  RepeatArray() = default;
  RepeatArray(std::size_t stimuli, std::size_t voxels, std::size_t trials)
      : stimuli_(stimuli), voxels_(voxels), trials_(trials),
        data_(stimuli * voxels * trials, 0.0) {}

  std::size_t stimuli() const { return stimuli_; }
  std::size_t voxels() const { return voxels_; }
  std::size_t trials() const { return trials_; }

  double& at(std::size_t s, std::size_t v, std::size_t t) {
    return data_[(s * voxels_ + v) * trials_ + t];
  }
  double at(std::size_t s, std::size_t v, std::size_t t) const {
    return data_[(s * voxels_ + v) * trials_ + t];
  }
  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  // Stimuli x voxels matrix of trial means.
  Eigen::MatrixXd TrialMean() const;

 private:
  std::size_t stimuli_ = 0;
  std::size_t voxels_ = 0;
  std::size_t trials_ = 0;
  std::vector<double> data_;
};

// Stimuli x voxels responses, with the trials they were averaged from when
// available.
struct ResponseMatrix {
  Eigen::MatrixXd values;
  RepeatArray repeats;

  bool has_repeats() const { return repeats.trials() > 0; }
};

struct PcaModel {
  Eigen::RowVectorXd mean;          // 1 x F
  Eigen::MatrixXd components;       // K x F, orthonormal rows
  Eigen::VectorXd explained_variance;  // K, nonincreasing

  std::size_t num_components() const { return static_cast<std::size_t>(components.rows()); }
};

// Mean-centered SVD; components are the top-K right singular vectors with
// the sign fixed so that each row's largest-magnitude entry is positive.
// Requires 1 <= K <= min(S - 1, F).
PcaModel fit_pca(const Eigen::MatrixXd& x, std::size_t k);

// Number of singular values of the centered data above a relative
// tolerance; the largest meaningful K for fit_pca.
std::size_t centered_rank(const Eigen::MatrixXd& x, double relative_tolerance = 1e-10);

// (X - mean) * components^T.
Eigen::MatrixXd pca_project(const PcaModel& model, const Eigen::MatrixXd& x);

// Ridge solutions for every penalty in a grid from one SVD of the centered
// design. weights[i] is K x V for lambdas[i]; intercepts[i] is 1 x V.
struct RidgePath {
  std::vector<double> lambdas;
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::RowVectorXd> intercepts;
};

// Throws SingularityError when the centered design has numerical rank zero
// and the grid contains lambda = 0; for lambda > 0 that case yields zero
// weights. A rank-deficient design with lambda = 0 gets the minimum-norm
// least-squares solution.
RidgePath ridge_path_fit(const Eigen::MatrixXd& x_train, const Eigen::MatrixXd& y_train,
                         std::span<const double> lambda_grid);

struct SplitConfig {
  double train_fraction = 0.85;
  int cv_folds = 7;
  std::vector<double> lambda_grid = DefaultLambdaGrid();
  std::uint64_t seed = 0;

  // 10 log-spaced values from 1e-3 to 1e5.
  static std::vector<double> DefaultLambdaGrid();

  void Validate() const;
};

struct LambdaSelection {
  std::vector<double> lambda_per_voxel;
  std::vector<std::size_t> lambda_index;  // into the grid
  Eigen::VectorXd cv_score;              // mean held-out R^2 at the chosen lambda
  Eigen::MatrixXd score_table;           // grid size x V mean held-out R^2
};

// Seeded shuffle of row indices cut into `folds` contiguous, balanced
// blocks. Returns the fold id of every row.
std::vector<int> make_folds(std::size_t rows, int folds, std::uint64_t seed);

// Per voxel, the grid value maximizing mean held-out R^2 across folds; ties
// go to the smallest lambda. Voxels whose held-out targets are constant in
// a fold ignore that fold.
LambdaSelection cv_select_lambda(const Eigen::MatrixXd& x_train, const Eigen::MatrixXd& y_train,
                                 const SplitConfig& cfg);

struct RidgeFit {
  Eigen::MatrixXd weights;         // K x V
  Eigen::RowVectorXd intercept;    // 1 x V
  std::vector<double> lambda_per_voxel;
  Eigen::VectorXd cv_score;        // mean held-out R^2 at the chosen lambda
};

// Cross-validated lambda selection followed by a refit on all training rows.
RidgeFit fit_ridge_cv(const Eigen::MatrixXd& x_train, const Eigen::MatrixXd& y_train,
                      const SplitConfig& cfg);

Eigen::MatrixXd predict(const RidgeFit& fit, const Eigen::MatrixXd& x);

// Throws UndefinedMetricError when either input is constant or the lengths
// differ or are below 2.
double pearson_r(std::span<const double> y, std::span<const double> y_hat);

// 1 - SS_res / SS_tot with SS_tot about the mean of y. Throws
// UndefinedMetricError when y is constant.
double r_squared(std::span<const double> y, std::span<const double> y_hat);

// Per voxel fraction of response variance that is stimulus-driven, for
// responses averaged over the T trials. Requires T >= 2.
std::vector<double> estimate_noise_ceiling(const RepeatArray& repeats);

// R^2 / nc, unclipped. Throws UndefinedMetricError when nc <= 0.
double noise_corrected_r2(double r2, double nc);

// Inclusion mask: nc >= threshold.
std::vector<std::uint8_t> filter_voxels(std::span<const double> nc, double threshold = 0.10);

struct TrainTestSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Seeded permutation; the first round(train_fraction * S) rows train, the
// rest test. Both index lists are returned in ascending order.
TrainTestSplit make_train_test_split(std::size_t rows, double train_fraction, std::uint64_t seed);

Eigen::MatrixXd select_rows(const Eigen::MatrixXd& m, std::span<const std::size_t> rows);

// Everything measured for one (features, responses) pair on one split.
struct EncodingResult {
  std::size_t pca_components = 0;
  std::vector<double> lambda_per_voxel;
  Eigen::VectorXd cv_score;   // training-side mean held-out R^2
  Eigen::VectorXd test_r;     // NaN where undefined
  Eigen::VectorXd test_r2;    // NaN where undefined
};

// Fits PCA on the training rows (K clamped to the centered rank of the
// training features), then cross-validated ridge, and scores the test rows.
EncodingResult run_encoding(const Eigen::MatrixXd& features, const Eigen::MatrixXd& responses,
                            const TrainTestSplit& split, std::size_t pca_components,
                            const SplitConfig& cfg);

}  // namespace geovoxel

#endif  // GEOVOXEL_ENCODING_HPP
