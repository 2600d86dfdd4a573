#include "geovoxel/roistats.hpp"

#include <cmath>
#include <limits>

#include "geovoxel/error.hpp"

namespace geovoxel {

namespace {

// Continued fraction for the incomplete beta function, modified Lentz.
double BetaContinuedFraction(double a, double b, double x) {
  constexpr int kMaxIterations = 10000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIterations; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  throw Error("incomplete beta continued fraction did not converge");
}

}  // namespace

void RoiAtlas::Validate() const {
  for (int label : labels) {
    if (label < 0) throw InputError("ROI labels must be >= 0");
    if (label != 0 && names.find(label) == names.end()) {
      throw InputError("ROI label " + std::to_string(label) + " has no name");
    }
  }
}

double roi_mean(std::span<const double> metric, std::span<const std::uint8_t> mask,
                const RoiAtlas& atlas, int roi_id) {
  if (metric.size() != mask.size() || metric.size() != atlas.labels.size()) {
    throw InputError("metric, mask and atlas lengths differ");
  }
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t v = 0; v < metric.size(); ++v) {
    if (!mask[v] || atlas.labels[v] != roi_id) continue;
    sum += metric[v];
    ++count;
  }
  if (count == 0) {
    const auto it = atlas.names.find(roi_id);
    throw EmptyRoiError("ROI " + (it != atlas.names.end() ? it->second : std::to_string(roi_id)) +
                        " has no included voxels");
  }
  return sum / static_cast<double>(count);
}

std::size_t best_layer(std::span<const double> scores) {
  std::size_t best = 0;
  bool found = false;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (std::isnan(scores[i])) continue;
    if (!found || scores[i] > scores[best]) {
      best = i;
      found = true;
    }
  }
  return best;
}

double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw InputError("incomplete beta needs a, b > 0");
  if (!(x >= 0.0 && x <= 1.0)) throw InputError("incomplete beta needs x in [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                           a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * BetaContinuedFraction(a, b, x) / a;
  return 1.0 - front * BetaContinuedFraction(b, a, 1.0 - x) / b;
}

double student_t_two_sided_p(double t, double df) {
  if (!(df > 0.0)) throw InputError("degrees of freedom must be positive");
  if (std::isnan(t)) return std::numeric_limits<double>::quiet_NaN();
  if (std::isinf(t)) return 0.0;
  const double x = df / (df + t * t);
  return regularized_incomplete_beta(0.5 * df, 0.5, x);
}

TestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InputError("paired t-test needs equal-length samples");
  if (a.size() < 2) throw InputError("paired t-test needs at least two pairs");
  const std::size_t n = a.size();
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i] - mean;
    ss += d * d;
  }
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (sd == 0.0) throw DegenerateTestError("paired differences have zero variance");

  TestResult r;
  r.n = static_cast<int>(n);
  r.df = r.n - 1;
  r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  r.p = student_t_two_sided_p(r.t, r.df);
  return r;
}

std::vector<double> difference_map(std::span<const double> a, std::span<const double> b,
                                   std::span<const std::uint8_t> mask) {
  if (a.size() != b.size() || a.size() != mask.size()) {
    throw InputError("difference map inputs differ in length");
  }
  std::vector<double> out(a.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t v = 0; v < a.size(); ++v) {
    if (mask[v]) out[v] = a[v] - b[v];
  }
  return out;
}

}  // namespace geovoxel
