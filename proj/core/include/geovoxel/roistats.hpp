#ifndef GEOVOXEL_ROISTATS_HPP
#define GEOVOXEL_ROISTATS_HPP

// ROI aggregation, best-layer selection, paired t-tests and per-voxel model
// difference maps.

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace geovoxel {

struct RoiAtlas {
  std::vector<int> labels;  // per voxel; 0 = unassigned
  std::map<int, std::string> names;

  // Every nonzero label must have a name.
  void Validate() const;
};

// Mean of `metric` over voxels with `mask` set and label `roi_id`. Throws
// EmptyRoiError when no voxel qualifies.
double roi_mean(std::span<const double> metric, std::span<const std::uint8_t> mask,
                const RoiAtlas& atlas, int roi_id);

// Index of the largest score; ties go to the earliest index. NaN scores are
// never selected unless every score is NaN, in which case 0 is returned.
std::size_t best_layer(std::span<const double> scores);

struct TestResult {
  double t = 0.0;
  double p = 1.0;
  int df = 0;
  int n = 0;
};

// Two-sided paired Student t-test on a - b. Throws InputError for n < 2 or
// unequal lengths and DegenerateTestError when the differences have zero
// variance.
TestResult paired_t_test(std::span<const double> a, std::span<const double> b);

// Regularized incomplete beta function I_x(a, b).
double regularized_incomplete_beta(double a, double b, double x);

// Two-sided tail probability P(|T| >= |t|) of Student's t with `df` degrees
// of freedom.
double student_t_two_sided_p(double t, double df);

// a - b where mask is set, quiet NaN elsewhere.
std::vector<double> difference_map(std::span<const double> a, std::span<const double> b,
                                   std::span<const std::uint8_t> mask);

}  // namespace geovoxel

#endif  // GEOVOXEL_ROISTATS_HPP
