#include "geovoxel/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>

#include "json.hpp"

#include "geovoxel/error.hpp"

namespace geovoxel {

static_assert(std::endian::native == std::endian::little,
              "tensor blobs are little-endian; big-endian hosts need byte swapping");

namespace {

template <typename T>
Tensor FromValues(std::string name, DType dtype, std::vector<std::size_t> shape,
                  std::span<const T> values) {
  Tensor t;
  t.name = std::move(name);
  t.dtype = dtype;
  t.shape = std::move(shape);
  if (t.num_elements() != values.size()) {
    throw InputError("tensor '" + t.name + "': shape holds " + std::to_string(t.num_elements()) +
                     " elements but " + std::to_string(values.size()) + " were given");
  }
  t.bytes.resize(values.size() * sizeof(T));
  if (!values.empty()) std::memcpy(t.bytes.data(), values.data(), t.bytes.size());
  return t;
}

template <typename T>
void Widen(const std::vector<std::uint8_t>& bytes, std::vector<double>& out) {
  const std::size_t n = bytes.size() / sizeof(T);
  out.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    T v;
    std::memcpy(&v, bytes.data() + i * sizeof(T), sizeof(T));
    out[i] = static_cast<double>(v);
  }
}

}  // namespace

std::size_t dtype_size(DType dtype) {
  switch (dtype) {
    case DType::kF32: return 4;
    case DType::kF64: return 8;
    case DType::kI32: return 4;
    case DType::kU8: return 1;
  }
  return 0;
}

std::string dtype_name(DType dtype) {
  switch (dtype) {
    case DType::kF32: return "f32";
    case DType::kF64: return "f64";
    case DType::kI32: return "i32";
    case DType::kU8: return "u8";
  }
  return "?";
}

DType parse_dtype(const std::string& name) {
  if (name == "f32") return DType::kF32;
  if (name == "f64") return DType::kF64;
  if (name == "i32") return DType::kI32;
  if (name == "u8") return DType::kU8;
  throw InputError("unknown dtype '" + name + "'");
}

std::size_t Tensor::num_elements() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor Tensor::FromF64(std::string name, std::vector<std::size_t> shape,
                       std::span<const double> values) {
  return FromValues(std::move(name), DType::kF64, std::move(shape), values);
}

Tensor Tensor::FromF32(std::string name, std::vector<std::size_t> shape,
                       std::span<const float> values) {
  return FromValues(std::move(name), DType::kF32, std::move(shape), values);
}

Tensor Tensor::FromI32(std::string name, std::vector<std::size_t> shape,
                       std::span<const std::int32_t> values) {
  return FromValues(std::move(name), DType::kI32, std::move(shape), values);
}

Tensor Tensor::FromU8(std::string name, std::vector<std::size_t> shape,
                      std::span<const std::uint8_t> values) {
  return FromValues(std::move(name), DType::kU8, std::move(shape), values);
}

Tensor Tensor::FromMatrix(std::string name, const Eigen::MatrixXd& m) {
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
  return FromF64(std::move(name),
                 {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                 std::span<const double>(rm.data(), static_cast<std::size_t>(rm.size())));
}

std::vector<double> Tensor::ToF64() const {
  std::vector<double> out;
  switch (dtype) {
    case DType::kF32: Widen<float>(bytes, out); break;
    case DType::kF64: Widen<double>(bytes, out); break;
    case DType::kI32: Widen<std::int32_t>(bytes, out); break;
    case DType::kU8: Widen<std::uint8_t>(bytes, out); break;
  }
  return out;
}

Eigen::MatrixXd Tensor::ToMatrix() const {
  if (shape.size() != 2) {
    throw InputError("tensor '" + name + "' has rank " + std::to_string(shape.size()) +
                     ", expected a matrix");
  }
  const auto values = ToF64();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(shape[0]), static_cast<Eigen::Index>(shape[1]));
  for (std::size_t r = 0; r < shape[0]; ++r) {
    for (std::size_t c = 0; c < shape[1]; ++c) {
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = values[r * shape[1] + c];
    }
  }
  return m;
}

std::filesystem::path sidecar_path(const std::filesystem::path& base) {
  return std::filesystem::path(base.string() + ".json");
}

std::filesystem::path blob_path(const std::filesystem::path& base) {
  return std::filesystem::path(base.string() + ".bin");
}

void write_tensor(const std::filesystem::path& base, const Tensor& tensor) {
  if (tensor.bytes.size() != tensor.num_elements() * dtype_size(tensor.dtype)) {
    throw InputError("tensor '" + tensor.name + "': byte length disagrees with shape");
  }
  if (base.has_parent_path()) std::filesystem::create_directories(base.parent_path());

  nlohmann::ordered_json meta;
  meta["name"] = tensor.name;
  meta["dtype"] = dtype_name(tensor.dtype);
  meta["shape"] = tensor.shape;
  meta["order"] = "row-major";
  meta["endianness"] = "little";
  meta["blob"] = blob_path(base).filename().string();

  std::ofstream blob(blob_path(base), std::ios::binary | std::ios::trunc);
  blob.write(reinterpret_cast<const char*>(tensor.bytes.data()),
             static_cast<std::streamsize>(tensor.bytes.size()));
  if (!blob) throw InputError("cannot write " + blob_path(base).string());

  std::ofstream side(sidecar_path(base), std::ios::trunc);
  side << meta.dump(2) << '\n';
  if (!side) throw InputError("cannot write " + sidecar_path(base).string());
}

Tensor read_tensor(const std::filesystem::path& base) {
  const auto side_path = sidecar_path(base);
  std::ifstream side(side_path);
  if (!side) throw InputError("cannot read tensor sidecar " + side_path.string());

  nlohmann::json meta;
  try {
    side >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("malformed tensor sidecar " + side_path.string() + ": " + e.what());
  }

  Tensor t;
  try {
    t.name = meta.value("name", std::string());
    t.dtype = parse_dtype(meta.at("dtype").get<std::string>());
    t.shape = meta.at("shape").get<std::vector<std::size_t>>();
    if (meta.value("order", std::string("row-major")) != "row-major") {
      throw InputError("only row-major tensors are supported");
    }
    if (meta.value("endianness", std::string("little")) != "little") {
      throw InputError("only little-endian tensors are supported");
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError("malformed tensor sidecar " + side_path.string() + ": " + e.what());
  }

  const auto blob_file =
      meta.contains("blob") ? side_path.parent_path() / meta["blob"].get<std::string>()
                            : blob_path(base);
  std::ifstream blob(blob_file, std::ios::binary);
  if (!blob) throw InputError("cannot read tensor blob " + blob_file.string());
  t.bytes.assign(std::istreambuf_iterator<char>(blob), std::istreambuf_iterator<char>());

  const std::size_t expected = t.num_elements() * dtype_size(t.dtype);
  if (t.bytes.size() != expected) {
    throw InputError("tensor blob " + blob_file.string() + " has " +
                     std::to_string(t.bytes.size()) + " bytes, expected " +
                     std::to_string(expected));
  }
  return t;
}

}  // namespace geovoxel
