#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pairint/core/error.hpp"
#include "pairint/core/rng.hpp"
#include "pairint/core/types.hpp"

namespace pairint {

enum class KernelFamily { Rbf, Matern25 };

inline std::string to_string(KernelFamily f) { return f == KernelFamily::Rbf ? "rbf" : "matern2.5"; }

/// Kernel family plus bandwidth; an empty bandwidth means "median heuristic".
struct KernelSpec {
  KernelFamily family = KernelFamily::Rbf;
  std::optional<double> bandwidth;

  static KernelSpec median(KernelFamily f) { return {f, std::nullopt}; }
  static KernelSpec fixed(KernelFamily f, double sigma) {
    if (!(sigma > 0.0)) throw ConfigError("kernel bandwidth must be positive");
    return {f, sigma};
  }
};

struct MmdResult {
  double mmd2 = 0.0;
  double bandwidth_used = 0.0;
  Index n_x = 0;
  Index n_y = 0;
};

// Translation-invariant kernels are evaluated from squared distances, which
// lets the Gram loops transform whole rows at once.
template <typename K>
concept DistanceKernel = requires(const K k, double sq, Eigen::ArrayXd& row) {
  { k.from_sqdist(sq) } -> std::convertible_to<double>;
  k.transform(row);
};

template <typename K>
concept PointKernel = requires(const K k, const double* x, const double* y, Index d) {
  { k(x, y, d) } -> std::convertible_to<double>;
};

/// exp(-|x-y|^2 / (2 sigma^2))
struct RbfKernel {
  double sigma;
  double from_sqdist(double sq) const { return std::exp(-sq / (2.0 * sigma * sigma)); }
  void transform(Eigen::ArrayXd& sq) const { sq = (sq * (-1.0 / (2.0 * sigma * sigma))).exp(); }
};

/// Matern nu = 5/2: (1 + sqrt5 r/sigma + 5 r^2/(3 sigma^2)) exp(-sqrt5 r/sigma)
struct Matern25Kernel {
  double sigma;
  double from_sqdist(double sq) const {
    const double a = std::sqrt(5.0 * sq) / sigma;
    return (1.0 + a + a * a / 3.0) * std::exp(-a);
  }
  void transform(Eigen::ArrayXd& sq) const {
    Eigen::ArrayXd a = (sq * 5.0).sqrt() / sigma;
    sq = (1.0 + a + a.square() / 3.0) * (-a).exp();
  }
};

/// k(x, y) = c for all inputs.
struct ConstantKernel {
  double c;
  double operator()(const double*, const double*, Index) const { return c; }
};

/// k(x, y) = x^T y
struct LinearKernel {
  double operator()(const double* x, const double* y, Index d) const {
    double s = 0.0;
    for (Index k = 0; k < d; ++k) s += x[k] * y[k];
    return s;
  }
};

inline double squared_distance(const double* x, const double* y, Index d) {
  double s = 0.0;
  for (Index k = 0; k < d; ++k) {
    const double t = x[k] - y[k];
    s += t * t;
  }
  return s;
}

/// Single kernel evaluation for a spec with an explicit bandwidth.
inline double kernel_eval(const KernelSpec& spec, const Vector& x, const Vector& y) {
  if (x.size() != y.size()) throw DataError("kernel_eval: dimension mismatch");
  if (!spec.bandwidth || !(*spec.bandwidth > 0.0)) throw ConfigError("kernel_eval needs an explicit positive bandwidth");
  const double sq = squared_distance(x.data(), y.data(), x.size());
  if (spec.family == KernelFamily::Rbf) return RbfKernel{*spec.bandwidth}.from_sqdist(sq);
  return Matern25Kernel{*spec.bandwidth}.from_sqdist(sq);
}

namespace detail {

// Sum of k(a_r, b_c) over all (r, c); with `self` set (a == b) only r != c
// counted, using symmetry. Accumulation order is fixed: per-row partial sums,
// then rows in order.
template <typename K>
double gram_sum(const RowMatrix& a, const RowMatrix& b, const K& kernel, bool self) {
  const Index n = a.rows();
  const Index m = b.rows();
  const Index d = a.cols();
  double total = 0.0;
  if constexpr (DistanceKernel<K>) {
    // Column-major copy of b so each feature is contiguous across samples.
    const Eigen::MatrixXd bt = b.transpose();
    Eigen::ArrayXd row(m);
    for (Index r = 0; r < n; ++r) {
      const Index first = self ? r + 1 : 0;
      const Index len = m - first;
      if (len <= 0) continue;
      Eigen::ArrayXd buf = Eigen::ArrayXd::Zero(len);
      for (Index k = 0; k < d; ++k) {
        const double xk = a(r, k);
        buf += (bt.row(k).segment(first, len).transpose().array() - xk).square();
      }
      kernel.transform(buf);
      total += buf.sum();
    }
    if (self) total *= 2.0;
  } else {
    for (Index r = 0; r < n; ++r) {
      double part = 0.0;
      for (Index c = 0; c < m; ++c) {
        if (self && c == r) continue;
        part += kernel(a.row(r).data(), b.row(c).data(), d);
      }
      total += part;
    }
  }
  return total;
}

}  // namespace detail

/// Unbiased squared MMD for an arbitrary kernel functor.
template <typename K>
double mmd2_unbiased_with(const SampleMatrix& x, const SampleMatrix& y, const K& kernel) {
  const Index n = x.rows();
  const Index m = y.rows();
  if (n < 2 || m < 2) throw DataError("mmd2_unbiased needs at least 2 samples per set");
  if (x.dim() != y.dim()) throw DataError("mmd2_unbiased: dimension mismatch");
  const double kxx = detail::gram_sum(x.data(), x.data(), kernel, true);
  const double kyy = detail::gram_sum(y.data(), y.data(), kernel, true);
  const double kxy = detail::gram_sum(x.data(), y.data(), kernel, false);
  const double nn = static_cast<double>(n);
  const double mm = static_cast<double>(m);
  return kxx / (nn * (nn - 1.0)) + kyy / (mm * (mm - 1.0)) - 2.0 * kxy / (nn * mm);
}

inline constexpr Index kMedianExactLimit = 4096;
inline constexpr std::uint64_t kMedianSubsampleSeed = 0x6d656469616eULL;

/// Median pairwise Euclidean distance over distinct index pairs (average of
/// the two middle values for an even count). Pools larger than 4096 rows are
/// uniformly subsampled to 4096 rows first. A zero median falls back to the
/// smallest nonzero distance.
inline double median_heuristic_bandwidth(const RowMatrix& pool, std::uint64_t seed = kMedianSubsampleSeed) {
  if (pool.rows() < 2) throw DataError("median heuristic needs at least 2 samples");
  const RowMatrix* src = &pool;
  RowMatrix sub;
  if (pool.rows() > kMedianExactLimit) {
    Rng rng(seed);
    auto idx = rng.sample_without_replacement(static_cast<std::size_t>(pool.rows()), kMedianExactLimit);
    std::sort(idx.begin(), idx.end());
    sub.resize(kMedianExactLimit, pool.cols());
    for (Index k = 0; k < kMedianExactLimit; ++k) sub.row(k) = pool.row(static_cast<Index>(idx[k]));
    src = &sub;
  }
  const Index n = src->rows();
  const Index d = src->cols();
  std::vector<double> dist;
  dist.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Index r = 0; r < n; ++r)
    for (Index c = r + 1; c < n; ++c) dist.push_back(squared_distance(src->row(r).data(), src->row(c).data(), d));
  const std::size_t mid = dist.size() / 2;
  std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid), dist.end());
  double med = std::sqrt(dist[mid]);
  if (dist.size() % 2 == 0) {
    const double below = *std::max_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid));
    med = 0.5 * (med + std::sqrt(below));
  }
  if (med > 0.0) return med;
  double smallest = 0.0;
  for (double s : dist)
    if (s > 0.0 && (smallest == 0.0 || s < smallest)) smallest = s;
  if (smallest == 0.0) throw DataError("degenerate pool: all points coincide");
  return std::sqrt(smallest);
}

inline double median_heuristic_bandwidth(const SampleMatrix& pool, std::uint64_t seed = kMedianSubsampleSeed) {
  return median_heuristic_bandwidth(pool.data(), seed);
}

/// Bandwidth for a two-sample problem: explicit, or the median heuristic on X u Y.
inline double resolve_bandwidth(const KernelSpec& spec, const SampleMatrix& x, const SampleMatrix& y) {
  if (spec.bandwidth) {
    if (!(*spec.bandwidth > 0.0)) throw ConfigError("kernel bandwidth must be positive");
    return *spec.bandwidth;
  }
  if (x.dim() != y.dim()) throw DataError("mmd2_unbiased: dimension mismatch");
  return median_heuristic_bandwidth(SampleMatrix::concat(x, y));
}

template <typename F>
auto with_kernel(KernelFamily family, double sigma, F&& f) {
  if (family == KernelFamily::Rbf) return f(RbfKernel{sigma});
  return f(Matern25Kernel{sigma});
}

/// Unbiased MMD^2 estimate (may be negative) with the bandwidth resolved per spec.
inline MmdResult mmd2_unbiased(const SampleMatrix& x, const SampleMatrix& y, const KernelSpec& spec) {
  if (x.rows() < 2 || y.rows() < 2) throw DataError("mmd2_unbiased needs at least 2 samples per set");
  if (x.dim() != y.dim()) throw DataError("mmd2_unbiased: dimension mismatch");
  const double sigma = resolve_bandwidth(spec, x, y);
  const double v = with_kernel(spec.family, sigma, [&](const auto& k) { return mmd2_unbiased_with(x, y, k); });
  return {v, sigma, x.rows(), y.rows()};
}

namespace detail {

inline double mmd2_from_gram(const Eigen::MatrixXd& gram, const std::vector<Index>& order, Index n) {
  const Index total = static_cast<Index>(order.size());
  const Index m = total - n;
  double kxx = 0.0, kyy = 0.0, kxy = 0.0;
  for (Index a = 0; a < total; ++a) {
    const Index ia = order[static_cast<std::size_t>(a)];
    for (Index b = a + 1; b < total; ++b) {
      const double v = gram(ia, order[static_cast<std::size_t>(b)]);
      if (b < n) kxx += v;
      else if (a >= n) kyy += v;
      else kxy += v;
    }
  }
  const double nn = static_cast<double>(n), mm = static_cast<double>(m);
  return 2.0 * kxx / (nn * (nn - 1.0)) + 2.0 * kyy / (mm * (mm - 1.0)) - 2.0 * kxy / (nn * mm);
}

}  // namespace detail

/// Permutation p-value (1 + #{permuted >= observed}) / (1 + n_permutations).
/// The bandwidth is resolved once on the pooled sample and held fixed.
inline double mmd_permutation_pvalue(const SampleMatrix& x, const SampleMatrix& y, const KernelSpec& spec,
                                     int n_permutations, Rng& rng) {
  if (n_permutations < 1) throw ConfigError("n_permutations must be at least 1");
  if (x.rows() < 2 || y.rows() < 2) throw DataError("mmd2_unbiased needs at least 2 samples per set");
  if (x.dim() != y.dim()) throw DataError("mmd2_unbiased: dimension mismatch");
  const double sigma = resolve_bandwidth(spec, x, y);
  const KernelSpec fixed{spec.family, sigma};
  const SampleMatrix pooled = SampleMatrix::concat(x, y);
  const Index n = x.rows();
  const Index total = pooled.rows();
  std::vector<Index> order(static_cast<std::size_t>(total));
  for (Index k = 0; k < total; ++k) order[static_cast<std::size_t>(k)] = k;

  int exceed = 0;
  if (total <= kMedianExactLimit) {
    Eigen::MatrixXd gram(total, total);
    with_kernel(spec.family, sigma, [&](const auto& k) {
      for (Index a = 0; a < total; ++a)
        for (Index b = a; b < total; ++b)
          gram(a, b) = gram(b, a) =
              k.from_sqdist(squared_distance(pooled.row(a).data(), pooled.row(b).data(), pooled.dim()));
      return 0;
    });
    const double observed = detail::mmd2_from_gram(gram, order, n);
    for (int p = 0; p < n_permutations; ++p) {
      rng.shuffle(order);
      if (detail::mmd2_from_gram(gram, order, n) >= observed) ++exceed;
    }
  } else {
    const double observed = mmd2_unbiased(x, y, fixed).mmd2;
    std::vector<std::size_t> idx(static_cast<std::size_t>(total));
    for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
    for (int p = 0; p < n_permutations; ++p) {
      rng.shuffle(idx);
      std::vector<std::size_t> left(idx.begin(), idx.begin() + n), right(idx.begin() + n, idx.end());
      if (mmd2_unbiased(pooled.select(left), pooled.select(right), fixed).mmd2 >= observed) ++exceed;
    }
  }
  return (1.0 + exceed) / (1.0 + n_permutations);
}

}  // namespace pairint
