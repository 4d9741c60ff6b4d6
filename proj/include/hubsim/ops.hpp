#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "hubsim/kernels.hpp"
#include "hubsim/tensor.hpp"

namespace hubsim {

// Dense boolean matrix, row-major; entry (i, j) true means row i may use
// column j.
class BoolMatrix {
 public:
  BoolMatrix() = default;
  BoolMatrix(std::size_t rows, std::size_t cols, bool fill = false);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool operator()(std::size_t i, std::size_t j) const { return bits_[i * cols_ + j] != 0; }
  void set(std::size_t i, std::size_t j, bool v) { bits_[i * cols_ + j] = v ? 1 : 0; }
  std::size_t count() const;
  std::size_t row_count(std::size_t i) const;
  const std::vector<std::uint8_t>& bits() const { return bits_; }

  bool operator==(const BoolMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> bits_;
};

// Matrix product over the trailing two axes. Leading axes are batch axes and
// must agree, except that a rank-2 right operand is shared by every batch.
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b, Exec exec = Exec::parallel);

// Row-wise softmax of a rank-2 tensor restricted to allowed entries.
// Disallowed entries come out exactly zero. Throws EmptyRowError when a row
// has no allowed entry.
template <typename T>
BasicTensor<T> softmax_masked(const BasicTensor<T>& logits, const BoolMatrix& allowed);

}  // namespace hubsim
