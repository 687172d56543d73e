#include "sda/tensor/sdat.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "sda/errors.hpp"

namespace sda {
namespace {

constexpr std::array<char, 4> kMagic{'S', 'D', 'A', 'T'};

template <typename U>
void put_le(std::ostream& os, U v) {
  std::array<char, sizeof(U)> buf;
  std::memcpy(buf.data(), &v, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf.begin(), buf.end());
  os.write(buf.data(), buf.size());
}

template <typename U>
U get_le(std::istream& is) {
  std::array<char, sizeof(U)> buf;
  if (!is.read(buf.data(), buf.size())) throw IoError("SDAT: truncated stream");
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf.begin(), buf.end());
  U v;
  std::memcpy(&v, buf.data(), sizeof(U));
  return v;
}

template <typename T>
Tensor<T> read_payload(std::istream& is, Shape shape) {
  Tensor<T> t(std::move(shape));
  if constexpr (std::endian::native == std::endian::little) {
    const auto bytes = static_cast<std::streamsize>(t.size() * sizeof(T));
    if (!is.read(reinterpret_cast<char*>(t.data().data()), bytes)) throw IoError("SDAT: truncated payload");
  } else {
    for (auto& v : t.data()) v = get_le<T>(is);
  }
  return t;
}

}  // namespace

template <typename T>
void write_sdat(std::ostream& os, const Tensor<T>& t) {
  if (t.rank() > 255) throw ShapeError("SDAT: rank exceeds 255");
  os.write(kMagic.data(), kMagic.size());
  put_le<std::uint8_t>(os, kSdatVersion);
  put_le<std::uint8_t>(os, static_cast<std::uint8_t>(dtype_of<T>()));
  put_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
  for (auto e : t.shape()) put_le<std::uint64_t>(os, e);
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(T)));
  } else {
    for (T v : t.data()) put_le<T>(os, v);
  }
  if (!os) throw IoError("SDAT: write failed");
}

AnyTensor read_sdat(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic) throw IoError("SDAT: bad magic");
  const auto version = get_le<std::uint8_t>(is);
  if (version != kSdatVersion) throw IoError("SDAT: unsupported version " + std::to_string(version));
  const auto dtype = get_le<std::uint8_t>(is);
  const auto rank = get_le<std::uint8_t>(is);
  Shape shape(rank);
  for (auto& e : shape) e = static_cast<std::size_t>(get_le<std::uint64_t>(is));
  switch (static_cast<DType>(dtype)) {
    case DType::f32:
      return read_payload<float>(is, std::move(shape));
    case DType::f64:
      return read_payload<double>(is, std::move(shape));
  }
  throw IoError("SDAT: unknown dtype byte " + std::to_string(dtype));
}

template <typename T>
std::string encode_sdat(const Tensor<T>& t) {
  std::ostringstream os(std::ios::binary);
  write_sdat(os, t);
  return std::move(os).str();
}

AnyTensor decode_sdat(const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  return read_sdat(is);
}

template <typename T>
void save_sdat(const std::filesystem::path& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_sdat(os, t);
  if (!os) throw IoError("write failed: " + path.string());
}

AnyTensor load_sdat(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  try {
    return read_sdat(is);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

template <typename T>
Tensor<T> load_sdat_as(const std::filesystem::path& path) {
  return tensor_as<T>(load_sdat(path));
}

template void write_sdat<float>(std::ostream&, const Tensor<float>&);
template void write_sdat<double>(std::ostream&, const Tensor<double>&);
template std::string encode_sdat<float>(const Tensor<float>&);
template std::string encode_sdat<double>(const Tensor<double>&);
template void save_sdat<float>(const std::filesystem::path&, const Tensor<float>&);
template void save_sdat<double>(const std::filesystem::path&, const Tensor<double>&);
template Tensor<float> load_sdat_as<float>(const std::filesystem::path&);
template Tensor<double> load_sdat_as<double>(const std::filesystem::path&);

}  // namespace sda
