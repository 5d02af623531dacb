#pragma once

#include <algorithm>
#include <limits>
#include <queue>
#include <span>
#include <vector>

#include "springtwin/core.hpp"

namespace springtwin {

struct Neighbor {
  double dist2;
  std::size_t index;

  friend bool operator<(const Neighbor& a, const Neighbor& b) {
    return a.dist2 < b.dist2 || (a.dist2 == b.dist2 && a.index < b.index);
  }
};

/// Static 3-D kd-tree. Query results are ordered by (distance, index), so
/// equidistant candidates resolve to the lower index, same as brute force.
class KdTree {
 public:
  explicit KdTree(std::span<const Vec3> points) : pts_(points.begin(), points.end()) {
    idx_.resize(pts_.size());
    for (std::size_t i = 0; i < idx_.size(); ++i) idx_[i] = i;
    nodes_.reserve(pts_.size());
    if (!pts_.empty()) build(0, idx_.size(), 0);
  }

  std::size_t size() const { return pts_.size(); }

  /// Nearest point to q; `exclude` is skipped (pass size() to skip nothing).
  Neighbor nearest(const Vec3& q, std::size_t exclude = std::numeric_limits<std::size_t>::max()) const {
    Neighbor best{std::numeric_limits<double>::infinity(), std::numeric_limits<std::size_t>::max()};
    if (!nodes_.empty()) nearest_rec(0, q, exclude, best);
    return best;
  }

  /// Up to k nearest points, sorted by (distance, index).
  std::vector<Neighbor> knn(const Vec3& q, std::size_t k,
                            std::size_t exclude = std::numeric_limits<std::size_t>::max()) const {
    std::priority_queue<Neighbor> heap;  // max-heap on (dist2, index)
    if (k > 0 && !nodes_.empty()) knn_rec(0, q, k, exclude, heap);
    std::vector<Neighbor> out(heap.size());
    for (std::size_t i = out.size(); i-- > 0;) {
      out[i] = heap.top();
      heap.pop();
    }
    return out;
  }

 private:
  struct Node {
    std::size_t point;
    int axis;
    std::ptrdiff_t left = -1, right = -1;
  };

  std::ptrdiff_t build(std::size_t lo, std::size_t hi, int depth) {
    if (lo >= hi) return -1;
    const int axis = depth % 3;
    const std::size_t mid = lo + (hi - lo) / 2;
    std::nth_element(idx_.begin() + static_cast<std::ptrdiff_t>(lo),
                     idx_.begin() + static_cast<std::ptrdiff_t>(mid),
                     idx_.begin() + static_cast<std::ptrdiff_t>(hi),
                     [&](std::size_t a, std::size_t b) {
                       return pts_[a][axis] < pts_[b][axis] ||
                              (pts_[a][axis] == pts_[b][axis] && a < b);
                     });
    const auto id = static_cast<std::ptrdiff_t>(nodes_.size());
    nodes_.push_back(Node{idx_[mid], axis});
    const auto l = build(lo, mid, depth + 1);
    const auto r = build(mid + 1, hi, depth + 1);
    nodes_[static_cast<std::size_t>(id)].left = l;
    nodes_[static_cast<std::size_t>(id)].right = r;
    return id;
  }

  void nearest_rec(std::ptrdiff_t ni, const Vec3& q, std::size_t exclude, Neighbor& best) const {
    const Node& n = nodes_[static_cast<std::size_t>(ni)];
    const Vec3& p = pts_[n.point];
    if (n.point != exclude) {
      const Neighbor cand{(p - q).squaredNorm(), n.point};
      if (cand < best) best = cand;
    }
    const double diff = q[n.axis] - p[n.axis];
    const auto near = diff < 0 ? n.left : n.right;
    const auto far = diff < 0 ? n.right : n.left;
    if (near >= 0) nearest_rec(near, q, exclude, best);
    if (far >= 0 && diff * diff <= best.dist2) nearest_rec(far, q, exclude, best);
  }

  void knn_rec(std::ptrdiff_t ni, const Vec3& q, std::size_t k, std::size_t exclude,
               std::priority_queue<Neighbor>& heap) const {
    const Node& n = nodes_[static_cast<std::size_t>(ni)];
    const Vec3& p = pts_[n.point];
    if (n.point != exclude) {
      const Neighbor cand{(p - q).squaredNorm(), n.point};
      if (heap.size() < k) {
        heap.push(cand);
      } else if (cand < heap.top()) {
        heap.pop();
        heap.push(cand);
      }
    }
    const double diff = q[n.axis] - p[n.axis];
    const auto near = diff < 0 ? n.left : n.right;
    const auto far = diff < 0 ? n.right : n.left;
    if (near >= 0) knn_rec(near, q, k, exclude, heap);
    if (far >= 0 && (heap.size() < k || diff * diff <= heap.top().dist2))
      knn_rec(far, q, k, exclude, heap);
  }

  Points pts_;
  std::vector<std::size_t> idx_;
  std::vector<Node> nodes_;
};

}  // namespace springtwin
