#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "hubsim/tensor.hpp"

namespace hubsim {

// Dump format: one UTF-8 JSON line
//   {"byte_order":"little","dtype":"f32","shape":[...]}\n
// followed by the row-major payload in little-endian byte order.
// dtype is "f32", "f64" or "u8" (masks).

template <typename T>
void write_tensor(std::ostream& out, const BasicTensor<T>& t);
template <typename T>
void write_tensor(const std::filesystem::path& path, const BasicTensor<T>& t);

// Reads a dump whose dtype matches T exactly.
template <typename T>
BasicTensor<T> read_tensor(std::istream& in);
template <typename T>
BasicTensor<T> read_tensor(const std::filesystem::path& path);

// Returns the dtype tag from a dump's header without consuming the payload.
std::string peek_dtype(const std::filesystem::path& path);

}  // namespace hubsim
