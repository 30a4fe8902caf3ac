#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <limits>
#include <vector>

namespace arcpick {

/**
 * @brief Static 3-D kd-tree over a borrowed point array.
 *
 * The point vector must outlive the tree and stay unmodified. Query results
 * are deterministic: radius queries return indices in ascending order and
 * nearest-neighbor ties resolve to the lowest index.
 */
class KdTree3 {
public:
    explicit KdTree3(const std::vector<Eigen::Vector3d>& points);

    struct Nearest {
        std::size_t index = std::numeric_limits<std::size_t>::max();
        double squared_distance = std::numeric_limits<double>::infinity();
    };

    Nearest nearest(const Eigen::Vector3d& query) const;

    /// Indices of points with distance <= radius, ascending.
    void radius_search(const Eigen::Vector3d& query, double radius, std::vector<std::size_t>& out) const;

    std::size_t size() const { return points_->size(); }

private:
    struct Node {
        std::size_t begin = 0;
        std::size_t end = 0;
        int axis = -1;  // -1 marks a leaf
        double split = 0.0;
        std::size_t left = 0;
        std::size_t right = 0;
    };

    std::size_t build(std::size_t begin, std::size_t end);
    void nearest_impl(std::size_t node, const Eigen::Vector3d& q, Nearest& best) const;
    void radius_impl(std::size_t node, const Eigen::Vector3d& q, double r2, std::vector<std::size_t>& out) const;

    const std::vector<Eigen::Vector3d>* points_;
    std::vector<std::size_t> order_;
    std::vector<Node> nodes_;
    static constexpr std::size_t kLeafSize = 12;
};

}  // namespace arcpick
