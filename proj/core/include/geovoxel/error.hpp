#ifndef GEOVOXEL_ERROR_HPP
#define GEOVOXEL_ERROR_HPP

#include <stdexcept>
#include <string>

namespace geovoxel {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent arguments: shape mismatches, out-of-range
// configuration values, unreadable files.
class InputError : public Error {
 public:
  using Error::Error;
};

// The contrastive objective was asked to run on an empty covisibility mask.
class NoCorrespondencesError : public Error {
 public:
  NoCorrespondencesError() : Error("no correspondences: covisibility mask is empty") {}
  explicit NoCorrespondencesError(const std::string& what) : Error(what) {}
};

// Unregularized least squares on a design matrix of numerical rank zero.
class SingularityError : public Error {
 public:
  using Error::Error;
};

// A statistic that is undefined for the given data (constant targets,
// zero noise ceiling, ...).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

// Paired test whose differences have zero variance.
class DegenerateTestError : public Error {
 public:
  using Error::Error;
};

// ROI with no included voxels.
class EmptyRoiError : public Error {
 public:
  using Error::Error;
};

// Failure inside a pipeline stage; what() is prefixed with "[stage] ".
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& message)
      : Error("[" + stage + "] " + message), stage_(std::move(stage)) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace geovoxel

#endif  // GEOVOXEL_ERROR_HPP
