#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "geovoxel/encoding.hpp"
#include "geovoxel/error.hpp"
#include "geovoxel/random.hpp"
#include "geovoxel/responses.hpp"

namespace gv = geovoxel;

namespace {

Eigen::MatrixXd RandomMatrix(Eigen::Index r, Eigen::Index c, gv::Rng& rng) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.Normal();
  return m;
}

// Ridge via the normal equations on explicitly centered data.
Eigen::MatrixXd NormalEquationsRidge(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, double lambda) {
  const Eigen::MatrixXd xc = x.rowwise() - x.colwise().mean();
  const Eigen::MatrixXd yc = y.rowwise() - y.colwise().mean();
  const Eigen::MatrixXd a =
      xc.transpose() * xc + lambda * Eigen::MatrixXd::Identity(x.cols(), x.cols());
  return a.ldlt().solve(xc.transpose() * yc);
}

std::vector<double> Col(const Eigen::MatrixXd& m, Eigen::Index c) {
  return std::vector<double>(m.col(c).data(), m.col(c).data() + m.rows());
}

}  // namespace

// ---- PCA ----

TEST(Pca, RankOneData) {
  gv::Rng rng(1);
  const Eigen::RowVector3d dir(1.0, -2.0, 0.5);
  Eigen::MatrixXd x(10, 3);
  for (int i = 0; i < 10; ++i) x.row(i) = Eigen::RowVector3d(4, 5, 6) + rng.Normal() * dir;
  const auto m = gv::fit_pca(x, 3);
  EXPECT_GT(m.explained_variance[0], 0.1);
  EXPECT_NEAR(m.explained_variance[1], 0.0, 1e-12);
  EXPECT_NEAR(m.explained_variance[2], 0.0, 1e-12);
  EXPECT_EQ(gv::centered_rank(x), 1u);
}

TEST(Pca, FullRankReconstructionIsLossless) {
  gv::Rng rng(2);
  const Eigen::MatrixXd x = RandomMatrix(12, 5, rng);
  const auto m = gv::fit_pca(x, 5);
  const Eigen::MatrixXd z = gv::pca_project(m, x);
  const Eigen::MatrixXd back = (z * m.components).rowwise() + m.mean;
  EXPECT_LT((back - x).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Pca, MatchesCovarianceEigendecomposition) {
  gv::Rng rng(3);
  const Eigen::MatrixXd x = RandomMatrix(4, 3, rng);
  const auto m = gv::fit_pca(x, 3);
  const Eigen::MatrixXd xc = x.rowwise() - x.colwise().mean();
  const Eigen::MatrixXd cov = xc.transpose() * xc / 3.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  // 4 centered rows have rank 3; compare all components.
  for (int k = 0; k < 3; ++k) {
    const Eigen::VectorXd ref = eig.eigenvectors().col(2 - k);
    const Eigen::VectorXd got = m.components.row(k).transpose();
    const double sign = ref.dot(got) < 0 ? -1.0 : 1.0;
    EXPECT_LT((sign * got - ref).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_NEAR(m.explained_variance[k], eig.eigenvalues()[2 - k], 1e-8);
  }
}

TEST(Pca, OrthonormalAndSorted) {
  gv::Rng rng(4);
  const Eigen::MatrixXd x = RandomMatrix(30, 8, rng);
  const auto m = gv::fit_pca(x, 6);
  const Eigen::MatrixXd gram = m.components * m.components.transpose();
  EXPECT_LT((gram - Eigen::MatrixXd::Identity(6, 6)).cwiseAbs().maxCoeff(), 1e-8);
  for (int k = 1; k < 6; ++k) EXPECT_GE(m.explained_variance[k - 1], m.explained_variance[k]);
  for (int k = 0; k < 6; ++k) EXPECT_GE(m.explained_variance[k], 0.0);
}

TEST(Pca, ReconstructionErrorNonincreasingInK) {
  gv::Rng rng(5);
  const Eigen::MatrixXd x = RandomMatrix(20, 7, rng);
  double previous = std::numeric_limits<double>::infinity();
  for (std::size_t k = 1; k <= 7; ++k) {
    const auto m = gv::fit_pca(x, k);
    const Eigen::MatrixXd back = (gv::pca_project(m, x) * m.components).rowwise() + m.mean;
    const double err = (back - x).squaredNorm();
    EXPECT_LE(err, previous + 1e-10);
    previous = err;
  }
}

TEST(Pca, TooManyComponentsThrows) {
  gv::Rng rng(6);
  const Eigen::MatrixXd x = RandomMatrix(5, 10, rng);
  EXPECT_THROW(gv::fit_pca(x, 5), gv::InputError);  // S - 1 = 4
  EXPECT_THROW(gv::fit_pca(x, 0), gv::InputError);
}

TEST(Pca, ProjectionCases) {
  gv::Rng rng(7);
  const Eigen::MatrixXd x = RandomMatrix(9, 4, rng);
  const auto m = gv::fit_pca(x, 3);
  // Rows equal to the mean project to zero.
  const Eigen::MatrixXd means = m.mean.replicate(3, 1);
  EXPECT_LT(gv::pca_project(m, means).cwiseAbs().maxCoeff(), 1e-15);
  // Direct matrix-product oracle.
  const Eigen::MatrixXd y = RandomMatrix(6, 4, rng);
  Eigen::MatrixXd oracle(6, 3);
  for (int i = 0; i < 6; ++i)
    for (int k = 0; k < 3; ++k) {
      double s = 0.0;
      for (int f = 0; f < 4; ++f) s += (y(i, f) - m.mean(f)) * m.components(k, f);
      oracle(i, k) = s;
    }
  EXPECT_LT((gv::pca_project(m, y) - oracle).cwiseAbs().maxCoeff(), 1e-10);
  // Identity basis.
  gv::PcaModel id{m.mean, Eigen::MatrixXd::Identity(4, 4), Eigen::VectorXd::Ones(4)};
  EXPECT_LT((gv::pca_project(id, y) - (y.rowwise() - m.mean)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_THROW(gv::pca_project(m, RandomMatrix(2, 5, rng)), gv::InputError);
}

// ---- ridge ----

TEST(Ridge, ExactLine) {
  Eigen::MatrixXd y(2, 1);
  y << 1, 2;
  const std::vector<double> grid{0.0};
  // Centered design: slope 1 and intercept mean(y) = 1.5.
  Eigen::MatrixXd xc(2, 1);
  xc << -0.5, 0.5;
  const auto centered = gv::ridge_path_fit(xc, y, grid);
  EXPECT_NEAR(centered.weights[0](0, 0), 1.0, 1e-12);
  EXPECT_NEAR(centered.intercepts[0](0), 1.5, 1e-12);
  // Raw design: same slope, intercept on the raw scale.
  Eigen::MatrixXd x(2, 1);
  x << 1, 2;
  const auto raw = gv::ridge_path_fit(x, y, grid);
  EXPECT_NEAR(raw.weights[0](0, 0), 1.0, 1e-12);
  EXPECT_NEAR(raw.intercepts[0](0), 0.0, 1e-12);
}

TEST(Ridge, HugePenaltyShrinksToMean) {
  gv::Rng rng(8);
  const Eigen::MatrixXd x = RandomMatrix(15, 3, rng);
  const Eigen::MatrixXd y = RandomMatrix(15, 2, rng);
  const std::vector<double> grid{1e12};
  const auto path = gv::ridge_path_fit(x, y, grid);
  EXPECT_LT(path.weights[0].cwiseAbs().maxCoeff(), 1e-9);
  const Eigen::MatrixXd pred = (x * path.weights[0]).rowwise() + path.intercepts[0];
  for (int v = 0; v < 2; ++v) EXPECT_NEAR(pred(3, v), y.col(v).mean(), 1e-8);
}

TEST(Ridge, MatchesNormalEquations) {
  gv::Rng rng(9);
  const Eigen::MatrixXd x = RandomMatrix(20, 5, rng);
  const Eigen::MatrixXd y = RandomMatrix(20, 3, rng);
  const std::vector<double> grid{1.0};
  const auto path = gv::ridge_path_fit(x, y, grid);
  EXPECT_LT((path.weights[0] - NormalEquationsRidge(x, y, 1.0)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Ridge, PathMatchesNormalEquationsAndShrinksMonotonically) {
  gv::Rng rng(10);
  const auto grid = gv::SplitConfig::DefaultLambdaGrid();
  for (int trial = 0; trial < 30; ++trial) {
    const Eigen::Index s = 10 + static_cast<Eigen::Index>(rng.Below(30));
    const Eigen::Index k = 1 + static_cast<Eigen::Index>(rng.Below(8));
    const Eigen::MatrixXd x = RandomMatrix(s, k, rng);
    const Eigen::MatrixXd y = RandomMatrix(s, 4, rng);
    const auto path = gv::ridge_path_fit(x, y, grid);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      EXPECT_LT((path.weights[i] - NormalEquationsRidge(x, y, grid[i])).cwiseAbs().maxCoeff(), 1e-8);
      if (i > 0) {
        for (int v = 0; v < 4; ++v) {
          EXPECT_GE(path.weights[i - 1].col(v).norm(), path.weights[i].col(v).norm() - 1e-12);
        }
      }
    }
  }
}

TEST(Ridge, DegenerateDesign) {
  const Eigen::MatrixXd x = Eigen::MatrixXd::Zero(6, 2);
  gv::Rng rng(11);
  const Eigen::MatrixXd y = RandomMatrix(6, 2, rng);
  const std::vector<double> zero{0.0};
  EXPECT_THROW(gv::ridge_path_fit(x, y, zero), gv::SingularityError);
  const std::vector<double> positive{0.5};
  const auto path = gv::ridge_path_fit(x, y, positive);
  EXPECT_EQ(path.weights[0].cwiseAbs().maxCoeff(), 0.0);
}

// ---- lambda selection ----

TEST(CrossValidation, SingleLambdaIsForced) {
  gv::Rng rng(12);
  const Eigen::MatrixXd x = RandomMatrix(30, 3, rng);
  const Eigen::MatrixXd y = RandomMatrix(30, 5, rng);
  gv::SplitConfig cfg;
  cfg.lambda_grid = {3.5};
  const auto sel = gv::cv_select_lambda(x, y, cfg);
  for (double l : sel.lambda_per_voxel) EXPECT_EQ(l, 3.5);
}

TEST(CrossValidation, NoiselessDataPicksZero) {
  gv::Rng rng(13);
  const Eigen::MatrixXd x = RandomMatrix(40, 4, rng);
  const Eigen::MatrixXd w = RandomMatrix(4, 6, rng);
  const Eigen::MatrixXd y = x * w;
  gv::SplitConfig cfg;
  cfg.lambda_grid = {0.0, 10.0, 1000.0};
  const auto sel = gv::cv_select_lambda(x, y, cfg);
  for (double l : sel.lambda_per_voxel) EXPECT_EQ(l, 0.0);
}

TEST(CrossValidation, PureNoisePicksLargePenalty) {
  int large = 0, total = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    gv::Rng rng(100 + seed);
    // Training-set size and fold count of the default protocol.
    const Eigen::MatrixXd x = RandomMatrix(170, 20, rng);
    const Eigen::MatrixXd y = RandomMatrix(170, 10, rng);
    gv::SplitConfig cfg;
    cfg.lambda_grid = {0.01, 1e6};
    cfg.seed = seed;
    for (double l : gv::cv_select_lambda(x, y, cfg).lambda_per_voxel) {
      large += l == 1e6;
      ++total;
    }
  }
  EXPECT_GE(large, 0.9 * total);
}

TEST(CrossValidation, TooFewRowsThrows) {
  gv::Rng rng(14);
  gv::SplitConfig cfg;
  EXPECT_THROW(gv::cv_select_lambda(RandomMatrix(6, 2, rng), RandomMatrix(6, 1, rng), cfg), gv::InputError);
}

TEST(CrossValidation, FoldsAreBalancedAndSeeded) {
  const auto folds = gv::make_folds(100, 7, 5);
  std::vector<int> counts(7, 0);
  for (int f : folds) ++counts[static_cast<std::size_t>(f)];
  for (int c : counts) EXPECT_TRUE(c == 14 || c == 15);
  EXPECT_EQ(folds, gv::make_folds(100, 7, 5));
  EXPECT_NE(folds, gv::make_folds(100, 7, 6));
}

TEST(CrossValidation, ConfigValidation) {
  gv::SplitConfig cfg;
  EXPECT_EQ(cfg.lambda_grid.size(), 10u);
  EXPECT_DOUBLE_EQ(cfg.lambda_grid.front(), 1e-3);
  EXPECT_DOUBLE_EQ(cfg.lambda_grid.back(), 1e5);
  EXPECT_NO_THROW(cfg.Validate());
  cfg.lambda_grid = {1.0, 0.5};
  EXPECT_THROW(cfg.Validate(), gv::InputError);
  cfg = gv::SplitConfig{};
  cfg.train_fraction = 1.0;
  EXPECT_THROW(cfg.Validate(), gv::InputError);
  cfg = gv::SplitConfig{};
  cfg.cv_folds = 1;
  EXPECT_THROW(cfg.Validate(), gv::InputError);
}

// ---- prediction ----

TEST(Predict, ZeroWeightsGiveIntercept) {
  gv::RidgeFit fit;
  fit.weights = Eigen::MatrixXd::Zero(3, 2);
  fit.intercept = Eigen::RowVector2d(0.5, -1.0);
  gv::Rng rng(15);
  const Eigen::MatrixXd p = gv::predict(fit, RandomMatrix(4, 3, rng));
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(p(i, 0), 0.5);
    EXPECT_EQ(p(i, 1), -1.0);
  }
  EXPECT_THROW(gv::predict(fit, RandomMatrix(4, 2, rng)), gv::InputError);
}

TEST(Predict, NoiselessRecoveryAndMemorization) {
  gv::Rng rng(16);
  const Eigen::MatrixXd x = RandomMatrix(30, 4, rng);
  const Eigen::MatrixXd w = RandomMatrix(4, 3, rng);
  const Eigen::MatrixXd y = (x * w).rowwise() + Eigen::RowVector3d(1, 2, 3);
  gv::SplitConfig cfg;
  cfg.lambda_grid = {0.0};
  const auto fit = gv::fit_ridge_cv(x, y, cfg);
  EXPECT_LT((gv::predict(fit, x) - y).cwiseAbs().maxCoeff(), 1e-8);
  const Eigen::MatrixXd row = x.row(7);
  EXPECT_LT((gv::predict(fit, row) - y.row(7)).cwiseAbs().maxCoeff(), 1e-8);
}

// ---- metrics ----

TEST(Metrics, PerfectAndAnticorrelated) {
  const std::vector<double> y{1.0, -2.0, 0.5, 3.0};
  EXPECT_NEAR(gv::pearson_r(y, y), 1.0, 1e-15);
  EXPECT_NEAR(gv::r_squared(y, y), 1.0, 1e-15);
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / 4.0;
  std::vector<double> flipped;
  for (double v : y) flipped.push_back(2 * mean - v);
  EXPECT_NEAR(gv::pearson_r(y, flipped), -1.0, 1e-15);
}

TEST(Metrics, HandWorkedExample) {
  // y = [1,2,4], y_hat = [1,3,3]: r = 2/sqrt(7), R^2 = 1 - 2/(14/3) = 4/7.
  const std::vector<double> y{1, 2, 4};
  const std::vector<double> yh{1, 3, 3};
  EXPECT_NEAR(gv::pearson_r(y, yh), 2.0 / std::sqrt(7.0), 1e-12);
  EXPECT_NEAR(gv::r_squared(y, yh), 4.0 / 7.0, 1e-12);
}

TEST(Metrics, ConstantTargetsAreUndefined) {
  const std::vector<double> c{2, 2, 2};
  const std::vector<double> y{1, 2, 3};
  EXPECT_THROW(gv::pearson_r(c, y), gv::UndefinedMetricError);
  EXPECT_THROW(gv::pearson_r(y, c), gv::UndefinedMetricError);
  EXPECT_THROW(gv::r_squared(c, y), gv::UndefinedMetricError);
  EXPECT_THROW(gv::pearson_r(std::vector<double>{1}, std::vector<double>{1}), gv::UndefinedMetricError);
}

TEST(Metrics, AffineInvarianceOfPearsonOnly) {
  gv::Rng rng(17);
  std::vector<double> y(50), yh(50), t(50);
  for (int i = 0; i < 50; ++i) {
    y[static_cast<std::size_t>(i)] = rng.Normal();
    yh[static_cast<std::size_t>(i)] = y[static_cast<std::size_t>(i)] + 0.5 * rng.Normal();
    t[static_cast<std::size_t>(i)] = 3.0 * yh[static_cast<std::size_t>(i)] + 2.0;
  }
  EXPECT_NEAR(gv::pearson_r(y, yh), gv::pearson_r(y, t), 1e-12);
  EXPECT_GT(std::abs(gv::r_squared(y, yh) - gv::r_squared(y, t)), 0.1);
}

// ---- noise ceiling ----

TEST(NoiseCeiling, NoiselessRepeatsGiveOne) {
  gv::Rng rng(18);
  gv::RepeatArray r(20, 3, 4);
  for (std::size_t s = 0; s < 20; ++s)
    for (std::size_t v = 0; v < 3; ++v) {
      const double value = rng.Normal();
      for (std::size_t t = 0; t < 4; ++t) r.at(s, v, t) = value;
    }
  for (double nc : gv::estimate_noise_ceiling(r)) EXPECT_EQ(nc, 1.0);
}

TEST(NoiseCeiling, EqualStimulusMeansGiveZero) {
  gv::Rng rng(19);
  gv::RepeatArray r(30, 2, 3);
  for (std::size_t s = 0; s < 30; ++s)
    for (std::size_t v = 0; v < 2; ++v) {
      const double e = rng.Normal();
      r.at(s, v, 0) = 5.0 - e;
      r.at(s, v, 1) = 5.0;
      r.at(s, v, 2) = 5.0 + e;
    }
  for (double nc : gv::estimate_noise_ceiling(r)) EXPECT_EQ(nc, 0.0);
}

TEST(NoiseCeiling, EqualSignalAndNoiseWithThreeTrials) {
  gv::Rng rng(20);
  const std::size_t s_count = 2000;
  gv::RepeatArray r(s_count, 10, 3);
  for (std::size_t s = 0; s < s_count; ++s)
    for (std::size_t v = 0; v < 10; ++v) {
      const double signal = rng.Normal();
      for (std::size_t t = 0; t < 3; ++t) r.at(s, v, t) = signal + rng.Normal();
    }
  for (double nc : gv::estimate_noise_ceiling(r)) EXPECT_NEAR(nc, 0.75, 0.05);
}

TEST(NoiseCeiling, AlwaysInUnitInterval) {
  gv::Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    gv::RepeatArray r(8, 5, 2 + rng.Below(3));
    const double scale = rng.Uniform(0.0, 3.0);
    for (auto& x : r.data()) x = rng.Normal();
    for (std::size_t s = 0; s < 8; ++s)
      for (std::size_t v = 0; v < 5; ++v) {
        const double shift = scale * rng.Normal();
        for (std::size_t t = 0; t < r.trials(); ++t) r.at(s, v, t) += shift;
      }
    for (double nc : gv::estimate_noise_ceiling(r)) {
      EXPECT_GE(nc, 0.0);
      EXPECT_LE(nc, 1.0);
    }
  }
}

TEST(NoiseCeiling, NeedsTwoTrials) {
  gv::RepeatArray r(5, 2, 1);
  EXPECT_THROW(gv::estimate_noise_ceiling(r), gv::InputError);
}

TEST(NoiseCeiling, CorrectionAndFilter) {
  EXPECT_NEAR(gv::noise_corrected_r2(0.3, 0.6), 0.5, 1e-15);
  EXPECT_EQ(gv::noise_corrected_r2(0.0, 0.37), 0.0);
  EXPECT_GT(gv::noise_corrected_r2(0.9, 0.8), 1.0);  // not clipped
  EXPECT_THROW(gv::noise_corrected_r2(0.3, 0.0), gv::UndefinedMetricError);
  const std::vector<double> nc{0.05, 0.10, 0.5};
  EXPECT_EQ(gv::filter_voxels(nc, 0.10), (std::vector<std::uint8_t>{0, 1, 1}));
}

// ---- split and protocol ----

TEST(Split, SizesAndDisjointness) {
  const auto split = gv::make_train_test_split(200, 0.85, 3);
  EXPECT_EQ(split.train.size(), 170u);
  EXPECT_EQ(split.test.size(), 30u);
  EXPECT_TRUE(std::is_sorted(split.train.begin(), split.train.end()));
  EXPECT_TRUE(std::is_sorted(split.test.begin(), split.test.end()));
  std::set<std::size_t> all(split.train.begin(), split.train.end());
  all.insert(split.test.begin(), split.test.end());
  EXPECT_EQ(all.size(), 200u);
  EXPECT_EQ(split.train, gv::make_train_test_split(200, 0.85, 3).train);
  EXPECT_THROW(gv::make_train_test_split(2, 0.85, 3), gv::InputError);
}

TEST(Protocol, DeterministicAndRecoversSignal) {
  gv::Rng rng(22);
  gv::FeatureMatrix fm{RandomMatrix(200, 16, rng), "true", "basis"};
  const auto syn = gv::synth_responses(fm, 12, 0.5, 3, 9);
  const auto split = gv::make_train_test_split(200, 0.85, 1);
  gv::SplitConfig cfg;
  cfg.seed = 2;
  const auto a = gv::run_encoding(fm.values, syn.responses.values, split, 1000, cfg);
  const auto b = gv::run_encoding(fm.values, syn.responses.values, split, 1000, cfg);
  EXPECT_EQ(a.lambda_per_voxel, b.lambda_per_voxel);
  EXPECT_EQ(a.test_r2, b.test_r2);
  EXPECT_EQ(a.pca_components, 16u);  // K clamped to rank
  const auto nc = gv::estimate_noise_ceiling(syn.responses.repeats);
  double mean = 0.0;
  for (int v = 0; v < 12; ++v) mean += gv::noise_corrected_r2(a.test_r2[v], nc[static_cast<std::size_t>(v)]);
  EXPECT_GT(mean / 12, 0.85);
  for (double l : a.lambda_per_voxel) {
    EXPECT_NE(std::find(cfg.lambda_grid.begin(), cfg.lambda_grid.end(), l), cfg.lambda_grid.end());
  }
}

TEST(Protocol, SelectRows) {
  Eigen::MatrixXd m(3, 2);
  m << 1, 2, 3, 4, 5, 6;
  const std::vector<std::size_t> rows{2, 0};
  Eigen::MatrixXd expected(2, 2);
  expected << 5, 6, 1, 2;
  EXPECT_EQ(gv::select_rows(m, rows), expected);
}

// ---- synthetic responses ----

TEST(Responses, NoiselessSingleTrialIsLinear) {
  gv::Rng rng(23);
  gv::FeatureMatrix fm{RandomMatrix(40, 6, rng), "m", "l"};
  const auto syn = gv::synth_responses(fm, 5, 0.0, 1, 4);
  const Eigen::MatrixXd expected = (fm.values * syn.true_weights).rowwise() + syn.true_intercept;
  EXPECT_LT((syn.responses.values - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Responses, NoiselessRepeatsHaveUnitCeiling) {
  gv::Rng rng(24);
  gv::FeatureMatrix fm{RandomMatrix(40, 6, rng), "m", "l"};
  const auto syn = gv::synth_responses(fm, 5, 0.0, 3, 4);
  for (double nc : gv::estimate_noise_ceiling(syn.responses.repeats)) EXPECT_EQ(nc, 1.0);
}

TEST(Responses, EqualSignalAndNoiseGiveUnitSnr) {
  gv::Rng rng(25);
  gv::FeatureMatrix fm{RandomMatrix(2000, 10, rng), "m", "l"};
  const auto syn = gv::synth_responses(fm, 8, 1.0, 3, 5);
  for (double nc : gv::estimate_noise_ceiling(syn.responses.repeats)) {
    // nc = snr^2 / (snr^2 + 1/T), so snr = sqrt(nc / (T (1 - nc))).
    const double snr = std::sqrt(nc / (3.0 * (1.0 - nc)));
    EXPECT_NEAR(snr, 1.0, 0.1);
  }
}

TEST(Responses, AtlasIsBalanced) {
  const auto atlas = gv::synth_atlas(50, 3);
  EXPECT_NO_THROW(atlas.Validate());
  std::vector<int> counts(8, 0);
  for (int l : atlas.labels) ++counts[static_cast<std::size_t>(l)];
  EXPECT_EQ(counts[0], 0);
  for (int r = 1; r <= 7; ++r) EXPECT_TRUE(counts[static_cast<std::size_t>(r)] == 7 || counts[static_cast<std::size_t>(r)] == 8);
  EXPECT_EQ(atlas.names.size(), 7u);
}
