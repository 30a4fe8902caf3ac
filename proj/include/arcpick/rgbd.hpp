#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cstddef>
#include <optional>
#include <vector>

#include "arcpick/core.hpp"

namespace arcpick::rgbd {

/// Pinhole intrinsics in pixels.
struct CameraIntrinsics {
    double fx = 0.0;
    double fy = 0.0;
    double cx = 0.0;
    double cy = 0.0;
    std::size_t width = 0;
    std::size_t height = 0;

    /// Throws CalibrationError unless fx, fy > 0 and the principal point lies inside the image.
    void validate() const;
};

/// Rigid motion x -> rotation * x + translation.
struct RigidTransform {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    static RigidTransform identity() { return {}; }

    Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation * p + translation; }
    RigidTransform inverse() const;
    /// (*this) * other, i.e. apply other first.
    RigidTransform compose(const RigidTransform& other) const;
    /// Orthonormal with det +1 within tol.
    bool is_valid(double tol = 1e-6) const;
};

/// Camera-to-world pose of a calibrated camera.
using CameraPose = RigidTransform;

struct RgbdFrame {
    ColorImage color;
    DepthImage depth;  ///< meters, 0 = missing
    CameraIntrinsics intrinsics;
    CameraPose pose;

    /// Throws CalibrationError when image sizes disagree with the intrinsics
    /// or depth is outside [0, 10) m.
    void validate() const;
};

struct SourcePixel {
    std::size_t frame = 0;
    long row = 0;
    long col = 0;
};

/**
 * @brief Colored point cloud in the world frame with per-point provenance.
 *
 * normals/normal_valid are either empty or sized like points. viewpoints holds
 * the camera center of each source frame and is used to orient normals.
 */
struct PointCloud {
    std::vector<Eigen::Vector3d> points;
    std::vector<Rgb> colors;
    std::vector<Eigen::Vector3d> normals;
    std::vector<std::uint8_t> normal_valid;
    std::vector<SourcePixel> source_pixels;
    std::vector<Eigen::Vector3d> viewpoints;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
    bool has_normals() const { return !normals.empty() && normals.size() == points.size(); }

    /// Append a point without normal.
    void push_back(const Eigen::Vector3d& p, const Rgb& color = Rgb{0, 0, 0}, SourcePixel src = {});
};

/// Concatenate clouds; source frame ids of later clouds are offset by the
/// viewpoint count of earlier ones.
PointCloud merge(const std::vector<PointCloud>& clouds);

/// Back-project every pixel with depth > 0 into the world frame. frame_id is
/// recorded in each point's source pixel.
PointCloud project_to_cloud(const RgbdFrame& frame, std::size_t frame_id = 0);

/// World point -> (column, row, depth along the optical axis) in the given camera.
Eigen::Vector3d project_to_pixel(const Eigen::Vector3d& world, const CameraIntrinsics& k, const CameraPose& pose);

struct NormalOptions {
    double radius = 0.01;
    std::size_t min_neighbors = 3;  ///< includes the query point
    /// Used for points whose source frame has no recorded viewpoint.
    Eigen::Vector3d fallback_viewpoint{0.0, 0.0, 1e6};
};

/**
 * @brief PCA normals over a radius neighborhood.
 *
 * Each normal is the smallest-eigenvalue eigenvector of the neighborhood
 * covariance, flipped to face the viewpoint of the point's source frame.
 * Points with fewer than min_neighbors neighbors get normal_valid = 0.
 */
PointCloud estimate_normals(const PointCloud& cloud, const NormalOptions& options = {});

struct BackgroundTolerance {
    double depth = 0.01;         ///< meters
    double color = 30.0 / 255.0;  ///< Euclidean RGB distance with channels in [0, 1]
};

/// Foreground where |depth difference| or color distance exceeds tolerance.
Mask background_subtract(const RgbdFrame& scene, const RgbdFrame& empty, const BackgroundTolerance& tol = {});

struct HoleFillResult {
    RgbdFrame frame;
    bool all_holes = false;  ///< input had no valid depth; returned unchanged
    int iterations = 0;
};

/// Iterative 8-neighbor dilation: each pass fills every hole bordering at
/// least one valid pixel with the median of its valid neighbors.
HoleFillResult fill_depth_holes(const RgbdFrame& frame, int max_iterations = 50);

struct IcpOptions {
    int max_iterations = 50;
    double tolerance = 1e-9;  ///< stop when |RMS change| falls below this
    double rejection_factor = 2.0;  ///< drop pairs beyond factor * median distance
    int divergence_patience = 5;
};

struct IcpResult {
    RigidTransform transform;  ///< maps source onto target
    double rms = 0.0;  ///< nearest-neighbor RMS over all source points
    int iterations = 0;
    bool converged = false;
    bool diverged = false;
};

/// Best-fit rigid transform for paired points (SVD / Kabsch). Throws InvalidArgument on size mismatch or < 3 pairs.
RigidTransform fit_rigid_transform(const std::vector<Eigen::Vector3d>& source,
                                   const std::vector<Eigen::Vector3d>& target);

/// Point-to-point ICP. Throws InvalidArgument if either cloud has < 10 points.
IcpResult icp_register(const PointCloud& source, const PointCloud& target, const IcpOptions& options = {},
                       const RigidTransform& initial = RigidTransform::identity());

/// Transform points, normals and viewpoints.
PointCloud transform_cloud(const PointCloud& cloud, const RigidTransform& t);

}  // namespace arcpick::rgbd
