#ifndef GEOVOXEL_TENSOR_IO_HPP
#define GEOVOXEL_TENSOR_IO_HPP

// Tensor container: a JSON sidecar `<base>.json`
//
//   {"name": "...", "dtype": "f32"|"f64"|"i32"|"u8", "shape": [...],
//    "order": "row-major", "endianness": "little", "blob": "<base>.bin"}
//
// next to a raw little-endian blob `<base>.bin` holding product(shape)
// elements in row-major order.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace geovoxel {

enum class DType { kF32, kF64, kI32, kU8 };

std::size_t dtype_size(DType dtype);
std::string dtype_name(DType dtype);
DType parse_dtype(const std::string& name);

struct Tensor {
  std::string name;
  DType dtype = DType::kF64;
  std::vector<std::size_t> shape;
  std::vector<std::uint8_t> bytes;

  std::size_t num_elements() const;

  static Tensor FromF64(std::string name, std::vector<std::size_t> shape,
                        std::span<const double> values);
  static Tensor FromF32(std::string name, std::vector<std::size_t> shape,
                        std::span<const float> values);
  static Tensor FromI32(std::string name, std::vector<std::size_t> shape,
                        std::span<const std::int32_t> values);
  static Tensor FromU8(std::string name, std::vector<std::size_t> shape,
                       std::span<const std::uint8_t> values);
  static Tensor FromMatrix(std::string name, const Eigen::MatrixXd& m);

  // Element values widened to double, whatever the stored dtype.
  std::vector<double> ToF64() const;
  // Requires a rank-2 shape.
  Eigen::MatrixXd ToMatrix() const;
};

// Paths of the two files for a container base path.
std::filesystem::path sidecar_path(const std::filesystem::path& base);
std::filesystem::path blob_path(const std::filesystem::path& base);

// Writes both files; creates parent directories as needed.
void write_tensor(const std::filesystem::path& base, const Tensor& tensor);

// Throws InputError when a file is missing, the sidecar is malformed or the
// blob length disagrees with shape and dtype.
Tensor read_tensor(const std::filesystem::path& base);

}  // namespace geovoxel

#endif  // GEOVOXEL_TENSOR_IO_HPP
