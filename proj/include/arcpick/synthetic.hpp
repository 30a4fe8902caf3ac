#pragma once

#include <Eigen/Core>
#include <optional>
#include <vector>

#include "arcpick/heightmap.hpp"
#include "arcpick/random.hpp"
#include "arcpick/rgbd.hpp"

namespace arcpick::synthetic {

/// Oriented box; rotation maps box-local axes to world.
struct Box {
    Eigen::Vector3d center = Eigen::Vector3d::Zero();
    Eigen::Vector3d half_extents = Eigen::Vector3d::Constant(0.01);
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Rgb color{200, 60, 60};
    bool returns_depth = true;
};

struct Sphere {
    Eigen::Vector3d center = Eigen::Vector3d::Zero();
    double radius = 0.02;
    Rgb color{60, 60, 200};
    bool returns_depth = true;
};

struct Hit {
    double t = 0.0;
    Rgb color{0, 0, 0};
    bool returns_depth = true;
};

/**
 * @brief Ray-castable scene of boxes and spheres over an optional floor plane.
 *
 * Renders exact pinhole RGB-D frames and orthographic heightmaps, which makes
 * it the ground-truth source for tests, benchmarks and the stow simulator.
 */
struct Scene {
    std::vector<Box> boxes;
    std::vector<Sphere> spheres;
    std::optional<double> floor_z = 0.0;
    Rgb floor_color{90, 90, 90};

    /// Closest intersection along origin + t * dir, t > 0.
    std::optional<Hit> cast(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) const;

    rgbd::RgbdFrame render(const rgbd::CameraIntrinsics& k, const rgbd::CameraPose& pose) const;

    /// Exact top surface per pixel column (all pixels known when a floor exists).
    heightmap::Heightmap render_heightmap(const heightmap::BinGeometry& bin, double resolution) const;
};

/// Camera at eye looking at target, image x axis roughly along world +x.
rgbd::CameraPose look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                         const Eigen::Vector3d& up_hint = Eigen::Vector3d(0.0, -1.0, 0.0));

/// Rotation about +z.
Eigen::Matrix3d yaw(double radians);

/// Intrinsics for a width x height image with the given horizontal field of view.
rgbd::CameraIntrinsics make_intrinsics(std::size_t width, std::size_t height, double horizontal_fov_rad);

/// Box resting on z = base with footprint center (x, y).
Box resting_box(double x, double y, double size_x, double size_y, double size_z, double yaw_rad, double base = 0.0,
                Rgb color = {200, 60, 60});

/// Points sampled uniformly on the surface of a box (in its world placement).
std::vector<Eigen::Vector3d> sample_box_surface(const Box& box, std::size_t count, Rng& rng);

struct ClutterParams {
    std::size_t min_objects = 3;
    std::size_t max_objects = 6;
    double min_gap = 0.03;  ///< between footprint bounding circles
    double min_size = 0.02;
    double max_size = 0.12;
    double min_height = 0.02;
    double max_height = 0.08;
};

/// Random non-overlapping yawed boxes resting on the bin floor (floor_z = bin.origin.z).
Scene random_bin_scene(const heightmap::BinGeometry& bin, Rng& rng, const ClutterParams& params = {});

struct CameraView {
    rgbd::CameraIntrinsics intrinsics;
    rgbd::CameraPose pose;
};

/// Two overhead cameras looking at the bin center from either side.
std::vector<CameraView> bin_cameras(const heightmap::BinGeometry& bin, std::size_t width = 320, std::size_t height = 240);

}  // namespace arcpick::synthetic
