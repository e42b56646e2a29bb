#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "evcal/types.hpp"

namespace evcal {

// Minimal 3D k-d tree for k-nearest-neighbor queries over a fixed point set.
class KdTree3 {
 public:
  explicit KdTree3(std::vector<Vec3> points) : points_(std::move(points)) {
    index_.resize(points_.size());
    std::iota(index_.begin(), index_.end(), 0);
    nodes_.reserve(points_.size());
    if (!points_.empty()) root_ = build(0, int(points_.size()));
  }

  std::size_t size() const { return points_.size(); }
  const Vec3& point(int i) const { return points_[i]; }

  // Indices of the k nearest points to the query (the query point itself is
  // included when it belongs to the set). Sorted by ascending distance.
  void knn(const Vec3& query, int k, std::vector<int>& out) const {
    out.clear();
    if (k <= 0 || points_.empty()) return;
    heap_.clear();
    search(root_, query, k);
    out.reserve(heap_.size());
    std::sort(heap_.begin(), heap_.end());
    for (const auto& [d2, idx] : heap_) out.push_back(idx);
  }

 private:
  struct Node {
    int axis = 0;
    int point = -1;
    int left = -1;
    int right = -1;
  };

  int build(int lo, int hi) {
    if (lo >= hi) return -1;
    // Split on the axis of largest spread.
    Vec3 mn = points_[index_[lo]], mx = mn;
    for (int i = lo + 1; i < hi; ++i) {
      mn = mn.cwiseMin(points_[index_[i]]);
      mx = mx.cwiseMax(points_[index_[i]]);
    }
    int axis = 0;
    (mx - mn).maxCoeff(&axis);
    const int mid = (lo + hi) / 2;
    std::nth_element(index_.begin() + lo, index_.begin() + mid, index_.begin() + hi,
                     [&](int a, int b) { return points_[a][axis] < points_[b][axis]; });
    Node node;
    node.axis = axis;
    node.point = index_[mid];
    const int id = int(nodes_.size());
    nodes_.push_back(node);
    const int left = build(lo, mid);
    const int right = build(mid + 1, hi);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  }

  void search(int node_id, const Vec3& q, int k) const {
    if (node_id < 0) return;
    const Node& node = nodes_[node_id];
    const Vec3& p = points_[node.point];
    const double d2 = (p - q).squaredNorm();
    if (int(heap_.size()) < k) {
      heap_.emplace_back(d2, node.point);
      std::push_heap(heap_.begin(), heap_.end());
    } else if (d2 < heap_.front().first) {
      std::pop_heap(heap_.begin(), heap_.end());
      heap_.back() = {d2, node.point};
      std::push_heap(heap_.begin(), heap_.end());
    }
    const double delta = q[node.axis] - p[node.axis];
    const int near = delta < 0 ? node.left : node.right;
    const int far = delta < 0 ? node.right : node.left;
    search(near, q, k);
    if (int(heap_.size()) < k || delta * delta < heap_.front().first) search(far, q, k);
  }

  std::vector<Vec3> points_;
  std::vector<int> index_;
  std::vector<Node> nodes_;
  int root_ = -1;
  mutable std::vector<std::pair<double, int>> heap_;
};

}  // namespace evcal
