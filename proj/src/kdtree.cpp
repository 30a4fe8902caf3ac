#include "arcpick/kdtree.hpp"

#include <algorithm>

namespace arcpick {

KdTree3::KdTree3(const std::vector<Eigen::Vector3d>& points) : points_(&points), order_(points.size()) {
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    nodes_.reserve(2 * (points.size() / kLeafSize + 1));
    if (!points.empty()) build(0, points.size());
}

std::size_t KdTree3::build(std::size_t begin, std::size_t end) {
    const std::size_t id = nodes_.size();
    nodes_.push_back(Node{begin, end});
    if (end - begin <= kLeafSize) return id;

    Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
    Eigen::Vector3d hi = -lo;
    for (std::size_t i = begin; i < end; ++i) {
        lo = lo.cwiseMin((*points_)[order_[i]]);
        hi = hi.cwiseMax((*points_)[order_[i]]);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    if (hi[axis] - lo[axis] <= 0.0) return id;  // all coincident

    const std::size_t mid = begin + (end - begin) / 2;
    const auto& pts = *points_;
    std::nth_element(order_.begin() + static_cast<long>(begin), order_.begin() + static_cast<long>(mid),
                     order_.begin() + static_cast<long>(end), [&](std::size_t a, std::size_t b) {
                         if (pts[a][axis] != pts[b][axis]) return pts[a][axis] < pts[b][axis];
                         return a < b;
                     });
    const double split = pts[order_[mid]][axis];
    const std::size_t left = build(begin, mid);
    const std::size_t right = build(mid, end);
    nodes_[id].axis = axis;
    nodes_[id].split = split;
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
}

KdTree3::Nearest KdTree3::nearest(const Eigen::Vector3d& query) const {
    Nearest best;
    if (!nodes_.empty()) nearest_impl(0, query, best);
    return best;
}

void KdTree3::nearest_impl(std::size_t node_id, const Eigen::Vector3d& q, Nearest& best) const {
    const Node& node = nodes_[node_id];
    if (node.axis < 0) {
        for (std::size_t i = node.begin; i < node.end; ++i) {
            const std::size_t idx = order_[i];
            const double d2 = ((*points_)[idx] - q).squaredNorm();
            if (d2 < best.squared_distance || (d2 == best.squared_distance && idx < best.index)) {
                best.squared_distance = d2;
                best.index = idx;
            }
        }
        return;
    }
    const double diff = q[node.axis] - node.split;
    const std::size_t first = diff < 0.0 ? node.left : node.right;
    const std::size_t second = diff < 0.0 ? node.right : node.left;
    nearest_impl(first, q, best);
    // <= keeps equal-distance candidates on the far side reachable for the index tie-break.
    if (diff * diff <= best.squared_distance) nearest_impl(second, q, best);
}

void KdTree3::radius_search(const Eigen::Vector3d& query, double radius, std::vector<std::size_t>& out) const {
    out.clear();
    if (nodes_.empty()) return;
    radius_impl(0, query, radius * radius, out);
    std::sort(out.begin(), out.end());
}

void KdTree3::radius_impl(std::size_t node_id, const Eigen::Vector3d& q, double r2, std::vector<std::size_t>& out) const {
    const Node& node = nodes_[node_id];
    if (node.axis < 0) {
        for (std::size_t i = node.begin; i < node.end; ++i) {
            const std::size_t idx = order_[i];
            if (((*points_)[idx] - q).squaredNorm() <= r2) out.push_back(idx);
        }
        return;
    }
    const double diff = q[node.axis] - node.split;
    if (diff <= 0.0 || diff * diff <= r2) radius_impl(node.left, q, r2, out);
    if (diff >= 0.0 || diff * diff <= r2) radius_impl(node.right, q, r2, out);
}

}  // namespace arcpick
