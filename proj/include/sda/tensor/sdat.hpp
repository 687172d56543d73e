#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <variant>

#include "sda/tensor/tensor.hpp"

namespace sda {

// Binary tensor container:
//   "SDAT" | version u8 (1) | dtype u8 (0=f32, 1=f64) | rank u8 |
//   rank x u64 LE extents | row-major LE payload

using AnyTensor = std::variant<Tensor<float>, Tensor<double>>;

inline constexpr std::uint8_t kSdatVersion = 1;

template <typename T>
void write_sdat(std::ostream& os, const Tensor<T>& t);
AnyTensor read_sdat(std::istream& is);

template <typename T>
std::string encode_sdat(const Tensor<T>& t);
AnyTensor decode_sdat(const std::string& bytes);

template <typename T>
void save_sdat(const std::filesystem::path& path, const Tensor<T>& t);
AnyTensor load_sdat(const std::filesystem::path& path);

/// Loads and converts to T when the stored dtype differs.
template <typename T>
Tensor<T> load_sdat_as(const std::filesystem::path& path);

template <typename T>
Tensor<T> tensor_as(const AnyTensor& any) {
  return std::visit([](const auto& t) { return t.template cast<T>(); }, any);
}

}  // namespace sda
