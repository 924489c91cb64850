#pragma once

#include <algorithm>
#include <cmath>

#include "pairint/core/error.hpp"
#include "pairint/core/types.hpp"
#include "pairint/knn_index.hpp"

namespace pairint {

/// Floor applied to neighbour distances before taking logs (duplicate points).
inline constexpr double kKnnDistanceFloor = 1e-12;

/// k-NN estimate of KL(P || Q) for continuous densities:
///   (d/n) sum_i log(nu_k(i) / rho_k(i)) + log(m / (n - 1))
/// rho_k(i) is the k-th neighbour distance of p_i within P minus itself,
/// nu_k(i) the k-th neighbour distance of p_i within Q.
inline double knn_kl(const SampleMatrix& p, const SampleMatrix& q, int k) {
  if (k < 1) throw ConfigError("knn_kl: k must be at least 1");
  if (p.dim() != q.dim()) throw DataError("knn_kl: dimension mismatch");
  const Index n = p.rows();
  const Index m = q.rows();
  if (n <= k || m <= k)
    throw DataError("knn_kl: need more than k=" + std::to_string(k) + " samples in both sets");
  const KdTree tree_p(p.data());
  const KdTree tree_q(q.data());
  double acc = 0.0;
  for (Index r = 0; r < n; ++r) {
    const double* x = p.data().row(r).data();
    const double rho = std::max(std::sqrt(tree_p.kth_sqdist(x, k, r)), kKnnDistanceFloor);
    const double nu = std::max(std::sqrt(tree_q.kth_sqdist(x, k)), kKnnDistanceFloor);
    acc += std::log(nu / rho);
  }
  const double d = static_cast<double>(p.dim());
  return d / static_cast<double>(n) * acc + std::log(static_cast<double>(m) / static_cast<double>(n - 1));
}

}  // namespace pairint
