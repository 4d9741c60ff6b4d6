#include "hubsim/tensor_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace hubsim {

namespace {

template <typename T>
constexpr const char* dtype_tag();
template <>
constexpr const char* dtype_tag<float>() { return "f32"; }
template <>
constexpr const char* dtype_tag<double>() { return "f64"; }
template <>
constexpr const char* dtype_tag<std::uint8_t>() { return "u8"; }

template <typename T>
void to_little_endian(T& v) {
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    auto* p = reinterpret_cast<unsigned char*>(&v);
    std::reverse(p, p + sizeof(T));
  }
}

nlohmann::json read_header(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("tensor dump: missing header line");
  auto header = nlohmann::json::parse(line);
  if (header.value("byte_order", "") != "little") {
    throw std::runtime_error("tensor dump: unsupported byte order");
  }
  return header;
}

}  // namespace

template <typename T>
void write_tensor(std::ostream& out, const BasicTensor<T>& t) {
  nlohmann::json header;
  header["shape"] = t.shape();
  header["dtype"] = dtype_tag<T>();
  header["byte_order"] = "little";
  out << header.dump() << '\n';
  for (T v : t.data()) {
    to_little_endian(v);
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  if (!out) throw std::runtime_error("tensor dump: write failed");
}

template <typename T>
void write_tensor(const std::filesystem::path& path, const BasicTensor<T>& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_tensor(out, t);
}

template <typename T>
BasicTensor<T> read_tensor(std::istream& in) {
  const auto header = read_header(in);
  const std::string dtype = header.at("dtype").get<std::string>();
  if (dtype != dtype_tag<T>()) {
    throw std::runtime_error("tensor dump: dtype " + dtype + ", expected " + dtype_tag<T>());
  }
  Shape shape = header.at("shape").get<Shape>();
  std::vector<T> data(shape_numel(shape));
  for (auto& v : data) {
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    to_little_endian(v);
  }
  if (!in) throw std::runtime_error("tensor dump: truncated payload");
  return BasicTensor<T>(std::move(shape), std::move(data));
}

template <typename T>
BasicTensor<T> read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_tensor<T>(in);
}

std::string peek_dtype(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_header(in).at("dtype").get<std::string>();
}

#define HUBSIM_IO(T)                                                          \
  template void write_tensor(std::ostream&, const BasicTensor<T>&);           \
  template void write_tensor(const std::filesystem::path&, const BasicTensor<T>&); \
  template BasicTensor<T> read_tensor<T>(std::istream&);                      \
  template BasicTensor<T> read_tensor<T>(const std::filesystem::path&);

HUBSIM_IO(float)
HUBSIM_IO(double)
HUBSIM_IO(std::uint8_t)
#undef HUBSIM_IO

}  // namespace hubsim
