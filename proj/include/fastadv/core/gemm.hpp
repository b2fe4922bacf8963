#ifndef FASTADV_CORE_GEMM_HPP
#define FASTADV_CORE_GEMM_HPP

#include <cstddef>

#include <Eigen/Core>

namespace fastadv::detail {

template <typename T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMajor<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMajor<T>>;

enum class Trans { no, yes };

/// C[m,n] = op(A) * op(B) (or += when accumulate). All operands are
/// contiguous row-major; a and b are given in their stored layout.
template <typename T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b,
          T* c, bool accumulate) {
  const auto M = static_cast<Eigen::Index>(m);
  const auto N = static_cast<Eigen::Index>(n);
  const auto K = static_cast<Eigen::Index>(k);
  MutMap<T> C(c, M, N);
  // Stored shapes: A is [m,k] or [k,m]; B is [k,n] or [n,k].
  ConstMap<T> A(a, ta == Trans::no ? M : K, ta == Trans::no ? K : M);
  ConstMap<T> B(b, tb == Trans::no ? K : N, tb == Trans::no ? N : K);
  auto run = [&](const auto& lhs, const auto& rhs) {
    if (accumulate) {
      C.noalias() += lhs * rhs;
    } else {
      C.noalias() = lhs * rhs;
    }
  };
  if (ta == Trans::no && tb == Trans::no) {
    run(A, B);
  } else if (ta == Trans::no) {
    run(A, B.transpose());
  } else if (tb == Trans::no) {
    run(A.transpose(), B);
  } else {
    run(A.transpose(), B.transpose());
  }
}

}  // namespace fastadv::detail

#endif  // FASTADV_CORE_GEMM_HPP
