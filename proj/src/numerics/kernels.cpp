#include "hubsim/kernels.hpp"

#include <omp.h>

#include <cstdint>

namespace hubsim {

int max_threads() { return omp_get_max_threads(); }
void set_threads(int n) { omp_set_num_threads(n > 0 ? n : 1); }

namespace kernels {

namespace {

// Below this many multiply-adds the fork/join costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 14;

bool go_parallel(Exec exec, std::size_t work) {
  return exec == Exec::parallel && work >= kParallelWork && !omp_in_parallel();
}

template <typename T>
inline void gemm_row(const T* a, const T* b, T* c, std::size_t k, std::size_t n, bool accumulate) {
  if (!accumulate) {
    for (std::size_t j = 0; j < n; ++j) c[j] = T{0};
  }
  for (std::size_t p = 0; p < k; ++p) {
    const T av = a[p];
    const T* brow = b + p * n;
    for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
  }
}

}  // namespace

template <typename T>
void gemm(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m, std::size_t k,
          std::size_t n, bool accumulate, Exec exec) {
  const T* ap = a.data();
  const T* bp = b.data();
  T* cp = c.data();
  const auto rows = static_cast<std::int64_t>(m);
  if (go_parallel(exec, m * k * n)) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < rows; ++i) {
      gemm_row(ap + i * k, bp, cp + i * n, k, n, accumulate);
    }
  } else {
    for (std::int64_t i = 0; i < rows; ++i) {
      gemm_row(ap + i * k, bp, cp + i * n, k, n, accumulate);
    }
  }
}

template <typename T>
void gemm_tn_acc(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
                 std::size_t k, std::size_t n, Exec exec) {
  const T* ap = a.data();
  const T* bp = b.data();
  T* cp = c.data();
  auto body = [&](std::size_t r) {
    T* crow = cp + r * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = ap[i * k + r];
      if (av == T{0}) continue;
      const T* brow = bp + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  };
  const auto rows = static_cast<std::int64_t>(k);
  if (go_parallel(exec, m * k * n)) {
#pragma omp parallel for schedule(static)
    for (std::int64_t r = 0; r < rows; ++r) body(static_cast<std::size_t>(r));
  } else {
    for (std::int64_t r = 0; r < rows; ++r) body(static_cast<std::size_t>(r));
  }
}

template <typename T>
void gemm_nt(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m, std::size_t n,
             std::size_t k, bool accumulate, Exec exec) {
  const T* ap = a.data();
  const T* bp = b.data();
  T* cp = c.data();
  auto body = [&](std::size_t i) {
    const T* arow = ap + i * n;
    T* crow = cp + i * k;
    for (std::size_t r = 0; r < k; ++r) {
      const T* brow = bp + r * n;
      T s{0};
      for (std::size_t j = 0; j < n; ++j) s += arow[j] * brow[j];
      crow[r] = accumulate ? crow[r] + s : s;
    }
  };
  const auto rows = static_cast<std::int64_t>(m);
  if (go_parallel(exec, m * k * n)) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < rows; ++i) body(static_cast<std::size_t>(i));
  } else {
    for (std::int64_t i = 0; i < rows; ++i) body(static_cast<std::size_t>(i));
  }
}

template <typename T>
void add_row_bias(std::span<T> y, std::span<const T> bias, std::size_t m, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* row = y.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) row[j] += bias[j];
  }
}

template <typename T>
void col_sum_acc(std::span<const T> dy, std::span<T> db, std::size_t m, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = dy.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) db[j] += row[j];
  }
}

#define HUBSIM_INSTANTIATE(T)                                                                        \
  template void gemm<T>(std::span<const T>, std::span<const T>, std::span<T>, std::size_t,            \
                        std::size_t, std::size_t, bool, Exec);                                        \
  template void gemm_tn_acc<T>(std::span<const T>, std::span<const T>, std::span<T>, std::size_t,     \
                               std::size_t, std::size_t, Exec);                                       \
  template void gemm_nt<T>(std::span<const T>, std::span<const T>, std::span<T>, std::size_t,         \
                           std::size_t, std::size_t, bool, Exec);                                     \
  template void add_row_bias<T>(std::span<T>, std::span<const T>, std::size_t, std::size_t);          \
  template void col_sum_acc<T>(std::span<const T>, std::span<T>, std::size_t, std::size_t);

HUBSIM_INSTANTIATE(float)
HUBSIM_INSTANTIATE(double)
#undef HUBSIM_INSTANTIATE

}  // namespace kernels
}  // namespace hubsim
