#pragma once

#include <cstddef>
#include <span>

namespace hubsim {

// Every kernel exists in a serial and an OpenMP form. Both iterate the
// reduction axis in the same order for each output element, so results are
// bit-identical regardless of policy or thread count.
enum class Exec { serial, parallel };

int max_threads();
void set_threads(int n);

namespace kernels {

// c[m x n] (+)= a[m x k] * b[k x n]
template <typename T>
void gemm(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m, std::size_t k,
          std::size_t n, bool accumulate, Exec exec);

// c[k x n] += a[m x k]^T * b[m x n]   (weight gradient)
template <typename T>
void gemm_tn_acc(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
                 std::size_t k, std::size_t n, Exec exec);

// c[m x k] (+)= a[m x n] * b[k x n]^T   (input gradient)
template <typename T>
void gemm_nt(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m, std::size_t n,
             std::size_t k, bool accumulate, Exec exec);

// Adds bias[n] to every row of y[m x n].
template <typename T>
void add_row_bias(std::span<T> y, std::span<const T> bias, std::size_t m, std::size_t n);

// db[n] += column sums of dy[m x n], rows summed in ascending order.
template <typename T>
void col_sum_acc(std::span<const T> dy, std::span<T> db, std::size_t m, std::size_t n);

}  // namespace kernels
}  // namespace hubsim
