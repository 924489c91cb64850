#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <utility>

#include "pairint/core/error.hpp"
#include "pairint/core/rng.hpp"
#include "pairint/core/types.hpp"
#include "pairint/kernels.hpp"

namespace pairint {

struct MixturePools {
  SampleMatrix pool_a;  // control + double
  SampleMatrix pool_b;  // single i + single j
};

/// Two-sample construction for the disjointedness null
///   1/2 p(x|d_ij) + 1/2 p(x|d_0) = 1/2 p(x|d_i) + 1/2 p(x|d_j).
/// All four sources are downsampled without replacement to the smallest
/// source size; a source already at that size keeps its rows and order. The
/// draw uses a stream derived from (seed, min(i,j), max(i,j)).
inline MixturePools build_mixture_pools(const ExperimentDataset& ds, int i, int j, std::uint64_t seed) {
  const Pair p(i, j);
  const Condition conds[4] = {Condition::control(), Condition::pair(p), Condition::single(p.i), Condition::single(p.j)};
  const SampleMatrix* src[4];
  for (int k = 0; k < 4; ++k) {
    if (!ds.contains(conds[k])) throw DataError("disjointedness: condition " + conds[k].to_string() + " absent");
    src[k] = &ds.at(conds[k]);
    if (src[k]->rows() < 2)
      throw DataError("disjointedness: condition " + conds[k].to_string() + " has fewer than 2 samples");
  }
  Index smallest = src[0]->rows();
  for (auto* s : src) smallest = std::min(smallest, s->rows());
  Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(p.i), static_cast<std::uint64_t>(p.j)}));
  SampleMatrix balanced[4];
  for (int k = 0; k < 4; ++k) {
    if (src[k]->rows() == smallest) {
      balanced[k] = *src[k];
    } else {
      auto idx = rng.sample_without_replacement(static_cast<std::size_t>(src[k]->rows()), static_cast<std::size_t>(smallest));
      std::sort(idx.begin(), idx.end());
      balanced[k] = src[k]->select(idx);
    }
  }
  return {SampleMatrix::concat(balanced[0], balanced[1]), SampleMatrix::concat(balanced[2], balanced[3])};
}

/// Unbiased MMD^2 between the two mixture pools; the bandwidth (if not fixed)
/// comes from the median heuristic on the union of both pools.
inline MmdResult disjointedness_score(const ExperimentDataset& ds, int i, int j, const KernelSpec& spec,
                                      std::uint64_t seed) {
  const auto pools = build_mixture_pools(ds, i, j, seed);
  return mmd2_unbiased(pools.pool_a, pools.pool_b, spec);
}

/// Mean feature vectors centred on control: h_c = E[h(x)|c] - E[h(x)|control].
struct EmbeddingTable {
  Index dim = 0;
  std::map<Condition, Vector> vectors;

  const Vector& at(const Condition& c) const {
    auto it = vectors.find(c);
    if (it == vectors.end()) throw DataError("embedding table lacks condition " + c.to_string());
    return it->second;
  }
};

/// Centred mean embeddings with the identity feature map, or of a dataset whose
/// samples are already embeddings (e.g. loaded from external embedding CSVs).
inline EmbeddingTable mean_centered_embeddings(const ExperimentDataset& features) {
  if (!features.contains(Condition::control())) throw DataError("control condition absent");
  const Vector base = features.at(Condition::control()).mean();
  EmbeddingTable t;
  t.dim = features.dim();
  for (const auto& [c, m] : features.samples())
    if (!c.is_control()) t.vectors.emplace(c, m.mean() - base);
  return t;
}

/// Same, applying a per-sample feature map h first.
inline EmbeddingTable mean_centered_embeddings(const ExperimentDataset& ds,
                                               const std::function<SampleMatrix(const SampleMatrix&)>& h) {
  std::map<Condition, SampleMatrix> mapped;
  for (const auto& [c, m] : ds.samples()) mapped.emplace(c, h(m));
  return mean_centered_embeddings(ExperimentDataset(ds.n_perturbations(), std::move(mapped), ds.names()));
}

/// ||h_ij - h_i - h_j||_2
inline double embedding_residual_score(const EmbeddingTable& t, int i, int j) {
  const Pair p(i, j);
  const Vector& hi = t.at(Condition::single(p.i));
  const Vector& hj = t.at(Condition::single(p.j));
  const Vector& hij = t.at(Condition::pair(p));
  if (hi.size() != hj.size() || hi.size() != hij.size()) throw DataError("embedding dimension mismatch");
  return (hij - hi - hj).norm();
}

/// Squared cosine similarity cos(w_i, w_j)^2.
inline double cosine_sq(const Vector& wi, const Vector& wj) {
  if (wi.size() != wj.size()) throw DataError("cosine_sq: dimension mismatch");
  const double ni = wi.squaredNorm(), nj = wj.squaredNorm();
  if (ni == 0.0 || nj == 0.0) throw DataError("cosine_sq: zero vector");
  const double dot = wi.dot(wj);
  return std::min(1.0, dot * dot / (ni * nj));
}

/// Severity proxy sum_k w_k sign(w_ref_k), sign(0) = 0.
inline double severity(const Vector& w, const Vector& w_ref) {
  if (w.size() != w_ref.size()) throw DataError("severity: dimension mismatch");
  double s = 0.0;
  for (Index k = 0; k < w.size(); ++k) {
    const double r = w_ref(k);
    s += r > 0.0 ? w(k) : (r < 0.0 ? -w(k) : 0.0);
  }
  return s;
}

}  // namespace pairint
