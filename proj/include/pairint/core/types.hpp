#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "pairint/core/error.hpp"

namespace pairint {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Unordered pair of perturbations, stored with i < j.
struct Pair {
  int i = 0;
  int j = 1;

  Pair() = default;
  Pair(int a, int b) : i(std::min(a, b)), j(std::max(a, b)) {
    if (a == b) throw DataError("self-pair (" + std::to_string(a) + "," + std::to_string(b) + ")");
  }

  auto operator<=>(const Pair&) const = default;
};

/// Number of unordered pairs among n perturbations.
constexpr std::size_t pair_count(std::size_t n) { return n * (n - 1) / 2; }

/// Position of (i, j), i < j, in row-major upper-triangle order.
constexpr std::size_t pair_index(std::size_t n, std::size_t i, std::size_t j) {
  return i * n - i * (i + 1) / 2 + (j - i - 1);
}

/// All pairs in canonical (lexicographic) order.
inline std::vector<Pair> all_pairs(int n) {
  std::vector<Pair> out;
  out.reserve(pair_count(static_cast<std::size_t>(n)));
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) out.emplace_back(i, j);
  return out;
}

/// Experimental condition: control, single perturbation, or double perturbation.
class Condition {
 public:
  enum class Kind { Control = 0, Single = 1, Double = 2 };

  static Condition control() { return Condition(Kind::Control, -1, -1); }
  static Condition single(int i) {
    if (i < 0) throw DataError("negative perturbation index " + std::to_string(i));
    return Condition(Kind::Single, i, -1);
  }
  static Condition pair(int i, int j) {
    if (i == j) throw DataError("double condition with identical indices " + std::to_string(i));
    if (std::min(i, j) < 0) throw DataError("negative perturbation index in double condition");
    return Condition(Kind::Double, std::min(i, j), std::max(i, j));
  }
  static Condition pair(Pair p) { return pair(p.i, p.j); }

  Kind kind() const { return kind_; }
  int i() const { return i_; }
  int j() const { return j_; }

  bool is_control() const { return kind_ == Kind::Control; }
  bool is_single() const { return kind_ == Kind::Single; }
  bool is_double() const { return kind_ == Kind::Double; }

  std::string to_string() const {
    switch (kind_) {
      case Kind::Control: return "control";
      case Kind::Single: return "single(" + std::to_string(i_) + ")";
      case Kind::Double: return "double(" + std::to_string(i_) + "," + std::to_string(j_) + ")";
    }
    return "?";
  }

  auto operator<=>(const Condition&) const = default;

 private:
  Condition(Kind k, int i, int j) : kind_(k), i_(i), j_(j) {}

  Kind kind_;
  int i_;
  int j_;
};

/// Samples of one condition: rows are samples, columns are feature dimensions.
class SampleMatrix {
 public:
  SampleMatrix() = default;

  explicit SampleMatrix(RowMatrix data) : data_(std::move(data)) {
    if (data_.rows() < 1 || data_.cols() < 1) throw DataError("sample matrix must be non-empty");
    if (!data_.allFinite()) {
      for (Index r = 0; r < data_.rows(); ++r)
        if (!data_.row(r).allFinite())
          throw DataError("non-finite value in sample row " + std::to_string(r));
    }
  }

  Index rows() const { return data_.rows(); }
  Index dim() const { return data_.cols(); }
  const RowMatrix& data() const { return data_; }
  auto row(Index r) const { return data_.row(r); }

  /// Rows selected by index, in the given order.
  SampleMatrix select(const std::vector<std::size_t>& idx) const {
    RowMatrix out(static_cast<Index>(idx.size()), dim());
    for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Index>(k)) = data_.row(static_cast<Index>(idx[k]));
    return SampleMatrix(std::move(out));
  }

  /// Vertical concatenation.
  static SampleMatrix concat(const SampleMatrix& a, const SampleMatrix& b) {
    if (a.dim() != b.dim()) throw DataError("cannot concatenate sample matrices of different dimension");
    RowMatrix out(a.rows() + b.rows(), a.dim());
    out.topRows(a.rows()) = a.data_;
    out.bottomRows(b.rows()) = b.data_;
    return SampleMatrix(std::move(out));
  }

  Vector mean() const { return data_.colwise().mean().transpose(); }

 private:
  RowMatrix data_;
};

/// Per-condition sample sets sharing one feature dimension.
class ExperimentDataset {
 public:
  ExperimentDataset(int n_perturbations, std::map<Condition, SampleMatrix> samples,
                    std::vector<std::string> names = {}, std::vector<Pair> ground_truth = {})
      : n_(n_perturbations),
        samples_(std::move(samples)),
        names_(std::move(names)),
        ground_truth_(std::move(ground_truth)) {
    if (n_ < 1) throw DataError("n_perturbations must be positive");
    if (!samples_.contains(Condition::control())) throw DataError("control condition absent");
    dim_ = samples_.at(Condition::control()).dim();
    for (const auto& [c, m] : samples_) {
      if (m.dim() != dim_)
        throw DataError("condition " + c.to_string() + " has dimension " + std::to_string(m.dim()) +
                        ", expected " + std::to_string(dim_));
      if (!c.is_control() && (c.i() >= n_ || c.j() >= n_))
        throw DataError("condition " + c.to_string() + " references a perturbation >= n_perturbations");
    }
    if (!names_.empty() && static_cast<int>(names_.size()) != n_)
      throw DataError("names list length does not match n_perturbations");
  }

  int n_perturbations() const { return n_; }
  Index dim() const { return dim_; }
  const std::map<Condition, SampleMatrix>& samples() const { return samples_; }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<Pair>& ground_truth_pairs() const { return ground_truth_; }

  bool contains(const Condition& c) const { return samples_.contains(c); }

  const SampleMatrix& at(const Condition& c) const {
    auto it = samples_.find(c);
    if (it == samples_.end()) throw DataError("condition " + c.to_string() + " absent from dataset");
    return it->second;
  }

  /// Pairs whose double condition is present, in canonical order.
  std::vector<Pair> available_pairs() const {
    std::vector<Pair> out;
    for (const auto& [c, m] : samples_)
      if (c.is_double()) out.emplace_back(c.i(), c.j());
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  int n_;
  Index dim_ = 0;
  std::map<Condition, SampleMatrix> samples_;
  std::vector<std::string> names_;
  std::vector<Pair> ground_truth_;
};

/// Symmetric n x n matrix of pair scores with an observation mask.
/// Only the strict upper triangle is stored, so get(i, j) == get(j, i) always.
class ScoreMatrix {
 public:
  ScoreMatrix() = default;
  explicit ScoreMatrix(int n) : n_(n), entries_(pair_count(static_cast<std::size_t>(n))) {
    if (n < 2) throw DataError("score matrix needs at least 2 perturbations");
  }

  int n() const { return n_; }

  std::optional<double> get(int i, int j) const { return entries_[slot(i, j)]; }
  std::optional<double> get(Pair p) const { return get(p.i, p.j); }
  bool observed(int i, int j) const { return entries_[slot(i, j)].has_value(); }

  /// Value of an observed entry; throws if unobserved.
  double value(int i, int j) const {
    auto v = get(i, j);
    if (!v) throw DataError("entry (" + std::to_string(i) + "," + std::to_string(j) + ") unobserved");
    return *v;
  }
  double value(Pair p) const { return value(p.i, p.j); }

  void set(int i, int j, double v) {
    if (!std::isfinite(v))
      throw DataError("non-finite score for (" + std::to_string(i) + "," + std::to_string(j) + ")");
    entries_[slot(i, j)] = v;
  }
  void set(Pair p, double v) { set(p.i, p.j, v); }
  void clear(int i, int j) { entries_[slot(i, j)].reset(); }

  std::size_t observed_count() const {
    return static_cast<std::size_t>(std::count_if(entries_.begin(), entries_.end(),
                                                  [](const auto& e) { return e.has_value(); }));
  }
  bool fully_observed() const { return observed_count() == entries_.size(); }

  /// Observed pairs in canonical order.
  std::vector<Pair> observed_pairs() const {
    std::vector<Pair> out;
    for (int i = 0; i < n_; ++i)
      for (int j = i + 1; j < n_; ++j)
        if (observed(i, j)) out.emplace_back(i, j);
    return out;
  }

  bool operator==(const ScoreMatrix&) const = default;

 private:
  std::size_t slot(int i, int j) const {
    if (i == j) throw DataError("diagonal score entries are undefined");
    if (i < 0 || j < 0 || i >= n_ || j >= n_) throw DataError("score index out of range");
    if (i > j) std::swap(i, j);
    return pair_index(static_cast<std::size_t>(n_), static_cast<std::size_t>(i), static_cast<std::size_t>(j));
  }

  int n_ = 0;
  std::vector<std::optional<double>> entries_;
};

/// Known interacting pairs.
using RelationSet = std::set<Pair>;

}  // namespace pairint
