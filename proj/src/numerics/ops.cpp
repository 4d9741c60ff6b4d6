#include "hubsim/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hubsim/errors.hpp"

namespace hubsim {

BoolMatrix::BoolMatrix(std::size_t rows, std::size_t cols, bool fill)
    : rows_(rows), cols_(cols), bits_(rows * cols, fill ? 1 : 0) {}

std::size_t BoolMatrix::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

std::size_t BoolMatrix::row_count(std::size_t i) const {
  auto first = bits_.begin() + static_cast<std::ptrdiff_t>(i * cols_);
  return static_cast<std::size_t>(
      std::count(first, first + static_cast<std::ptrdiff_t>(cols_), std::uint8_t{1}));
}

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b, Exec exec) {
  auto mismatch = [&](const std::string& why) {
    return ShapeError("matmul: " + why + ": " + shape_to_string(a.shape()) + " x " +
                      shape_to_string(b.shape()));
  };
  if (a.rank() < 2 || b.rank() < 2) throw mismatch("operands must have rank >= 2");
  const std::size_t m = a.extent(a.rank() - 2);
  const std::size_t k = a.extent(a.rank() - 1);
  const std::size_t kb = b.extent(b.rank() - 2);
  const std::size_t n = b.extent(b.rank() - 1);
  if (k != kb) throw mismatch("inner extents differ");

  Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  const bool shared_b = batch_b.empty();
  if (!shared_b && batch_a != batch_b) throw mismatch("batch extents differ");

  Shape out_shape = batch_a;
  out_shape.push_back(m);
  out_shape.push_back(n);
  BasicTensor<T> out(out_shape);
  const std::size_t batches = shape_numel(batch_a);
  for (std::size_t bi = 0; bi < batches; ++bi) {
    auto as = a.data().subspan(bi * m * k, m * k);
    auto bs = shared_b ? b.data() : b.data().subspan(bi * k * n, k * n);
    auto cs = out.data().subspan(bi * m * n, m * n);
    kernels::gemm<T>(as, bs, cs, m, k, n, false, exec);
  }
  return out;
}

template <typename T>
BasicTensor<T> softmax_masked(const BasicTensor<T>& logits, const BoolMatrix& allowed) {
  if (logits.rank() != 2) {
    throw ShapeError("softmax_masked expects rank-2 logits, got " + shape_to_string(logits.shape()));
  }
  const std::size_t rows = logits.extent(0);
  const std::size_t cols = logits.extent(1);
  if (allowed.rows() != rows || allowed.cols() != cols) {
    throw ShapeError("softmax_masked: mask " + std::to_string(allowed.rows()) + "x" +
                     std::to_string(allowed.cols()) + " vs logits " +
                     shape_to_string(logits.shape()));
  }
  BasicTensor<T> out(logits.shape(), T{0});
  for (std::size_t i = 0; i < rows; ++i) {
    T mx = -std::numeric_limits<T>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < cols; ++j) {
      if (allowed(i, j)) {
        mx = std::max(mx, logits[i * cols + j]);
        any = true;
      }
    }
    if (!any) {
      throw EmptyRowError(i, "softmax_masked: query row " + std::to_string(i) +
                                 " has no allowed key (malformed topology)");
    }
    T sum{0};
    for (std::size_t j = 0; j < cols; ++j) {
      if (allowed(i, j)) {
        const T e = std::exp(logits[i * cols + j] - mx);
        out[i * cols + j] = e;
        sum += e;
      }
    }
    const T inv = T{1} / sum;
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] *= inv;
  }
  return out;
}

template BasicTensor<float> matmul(const BasicTensor<float>&, const BasicTensor<float>&, Exec);
template BasicTensor<double> matmul(const BasicTensor<double>&, const BasicTensor<double>&, Exec);
template BasicTensor<float> softmax_masked(const BasicTensor<float>&, const BoolMatrix&);
template BasicTensor<double> softmax_masked(const BasicTensor<double>&, const BoolMatrix&);

}  // namespace hubsim
