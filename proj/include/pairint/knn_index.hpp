#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <queue>
#include <vector>

#include "pairint/core/types.hpp"

namespace pairint {

/// Exact k-nearest-neighbour search under Euclidean distance (k-d tree).
class KdTree {
 public:
  explicit KdTree(RowMatrix points, Index leaf_size = 16) : pts_(std::move(points)), leaf_size_(leaf_size) {
    idx_.resize(static_cast<std::size_t>(pts_.rows()));
    std::iota(idx_.begin(), idx_.end(), Index{0});
    if (pts_.rows() > 0) build(0, pts_.rows());
  }

  Index size() const { return pts_.rows(); }
  Index dim() const { return pts_.cols(); }

  /// Squared distances to the k nearest points, ascending. A point whose
  /// index equals `exclude` is skipped (pass -1 to keep all).
  std::vector<double> knn_sqdist(const double* query, Index k, Index exclude = -1) const {
    Heap heap;
    if (!nodes_.empty()) search(0, query, k, exclude, heap);
    std::vector<double> out;
    out.reserve(heap.size());
    while (!heap.empty()) {
      out.push_back(heap.top());
      heap.pop();
    }
    std::reverse(out.begin(), out.end());
    return out;
  }

  /// Squared distance to the k-th nearest neighbour.
  double kth_sqdist(const double* query, Index k, Index exclude = -1) const {
    auto d = knn_sqdist(query, k, exclude);
    return d.empty() ? std::numeric_limits<double>::infinity() : d.back();
  }

 private:
  using Heap = std::priority_queue<double>;

  struct Node {
    Index begin, end;
    int axis = -1;  // -1 marks a leaf
    double split = 0.0;
    std::int32_t left = -1, right = -1;
  };

  std::int32_t build(Index begin, Index end) {
    const auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back({begin, end});
    if (end - begin <= leaf_size_) return id;
    // Split on the widest dimension at the median.
    int axis = 0;
    double best = -1.0;
    for (Index c = 0; c < pts_.cols(); ++c) {
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (Index t = begin; t < end; ++t) {
        const double v = pts_(idx_[static_cast<std::size_t>(t)], c);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      if (hi - lo > best) {
        best = hi - lo;
        axis = static_cast<int>(c);
      }
    }
    if (best <= 0.0) return id;  // all points identical: keep as leaf
    const Index mid = begin + (end - begin) / 2;
    std::nth_element(idx_.begin() + begin, idx_.begin() + mid, idx_.begin() + end,
                     [&](Index a, Index b) { return pts_(a, axis) < pts_(b, axis); });
    const double split = pts_(idx_[static_cast<std::size_t>(mid)], axis);
    nodes_[static_cast<std::size_t>(id)].axis = axis;
    nodes_[static_cast<std::size_t>(id)].split = split;
    const auto l = build(begin, mid);
    const auto r = build(mid, end);
    nodes_[static_cast<std::size_t>(id)].left = l;
    nodes_[static_cast<std::size_t>(id)].right = r;
    return id;
  }

  void search(std::int32_t id, const double* q, Index k, Index exclude, Heap& heap) const {
    const Node& node = nodes_[static_cast<std::size_t>(id)];
    if (node.axis < 0) {
      const Index d = pts_.cols();
      for (Index t = node.begin; t < node.end; ++t) {
        const Index p = idx_[static_cast<std::size_t>(t)];
        if (p == exclude) continue;
        double s = 0.0;
        for (Index c = 0; c < d; ++c) {
          const double diff = pts_(p, c) - q[c];
          s += diff * diff;
        }
        if (static_cast<Index>(heap.size()) < k) heap.push(s);
        else if (s < heap.top()) {
          heap.pop();
          heap.push(s);
        }
      }
      return;
    }
    const double diff = q[node.axis] - node.split;
    const auto near = diff < 0.0 ? node.left : node.right;
    const auto far = diff < 0.0 ? node.right : node.left;
    search(near, q, k, exclude, heap);
    if (static_cast<Index>(heap.size()) < k || diff * diff < heap.top()) search(far, q, k, exclude, heap);
  }

  RowMatrix pts_;
  Index leaf_size_;
  std::vector<Index> idx_;
  std::vector<Node> nodes_;
};

}  // namespace pairint
