#pragma once

// Shared fixtures for the test suites. Nothing here is used by the library.

#include <Eigen/Geometry>
#include <cmath>
#include <numbers>

#include "arcpick/random.hpp"
#include "arcpick/rgbd.hpp"
#include "arcpick/synthetic.hpp"

namespace arcpick::testing {

inline double deg(double d) { return d * std::numbers::pi / 180.0; }

inline rgbd::RigidTransform random_transform(Rng& rng, double max_angle, double max_translation) {
    Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
    axis.normalize();
    rgbd::RigidTransform t;
    t.rotation = Eigen::AngleAxisd(rng.uniform(0.0, max_angle), axis).toRotationMatrix();
    Eigen::Vector3d dir(rng.normal(), rng.normal(), rng.normal());
    t.translation = dir.normalized() * rng.uniform(0.0, max_translation);
    return t;
}

/// Asymmetric cloud (three boxes of different sizes) that pins down all six
/// degrees of freedom for ICP.
inline rgbd::PointCloud asymmetric_cloud(Rng& rng, std::size_t points_per_part = 400) {
    using synthetic::Box;
    std::vector<Box> parts(3);
    parts[0].center = {0.0, 0.0, 0.0};
    parts[0].half_extents = {0.20, 0.05, 0.04};
    parts[1].center = {0.15, 0.12, 0.03};
    parts[1].half_extents = {0.05, 0.10, 0.07};
    parts[2].center = {-0.12, -0.02, 0.10};
    parts[2].half_extents = {0.03, 0.03, 0.08};
    rgbd::PointCloud cloud;
    for (const auto& b : parts)
        for (const auto& p : synthetic::sample_box_surface(b, points_per_part, rng)) cloud.push_back(p);
    return cloud;
}

inline double rotation_error(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b) { return (a - b).norm(); }

}  // namespace arcpick::testing
