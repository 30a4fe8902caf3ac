#pragma once

#include <Eigen/Core>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "arcpick/core.hpp"
#include "arcpick/heightmap.hpp"
#include "arcpick/planner.hpp"
#include "arcpick/rgbd.hpp"

namespace arcpick::state_tracker {

struct Aabb {
    Eigen::Vector3d min = Eigen::Vector3d::Zero();
    Eigen::Vector3d max = Eigen::Vector3d::Zero();

    Eigen::Vector3d dims() const { return max - min; }
    /// Throws InvalidArgument on an empty point set.
    static Aabb of(std::span<const Eigen::Vector3d> points);
};

struct TrackedObject {
    std::string object_id;
    rgbd::RigidTransform pose;  ///< model frame -> world
    Aabb aabb;                  ///< world-frame bounds of the posed model
    double placed_time = 0.0;
    double support_surface_height = 0.0;  ///< meters above the bin floor
    bool low_confidence = false;          ///< registration failed; pose is centroid-only
    double rms = 0.0;                     ///< final registration residual
};

/// Objects in placement order plus the last frames seen.
struct StorageState {
    std::vector<TrackedObject> objects;
    std::vector<rgbd::RgbdFrame> last_frames;

    const TrackedObject* find(const std::string& object_id) const;
};

struct LocalizeResult {
    rgbd::PointCloud surfaces;   ///< points of the largest changed component
    Mask component;              ///< pixels of that component
    std::size_t components = 0;  ///< 8-connected changed regions found
    bool empty = true;           ///< nothing changed above tolerance
    bool multiple = false;       ///< more than one region changed; only the largest is kept
};

/// Largest 8-connected component of the mask, ties by raster order of the
/// first pixel. Also returns the number of components.
std::pair<Mask, std::size_t> largest_component(const Mask& mask);

/// Changed surfaces between two frames of the same calibrated camera.
LocalizeResult diff_localize(const rgbd::RgbdFrame& before, const rgbd::RgbdFrame& after,
                             const rgbd::BackgroundTolerance& tolerance = {});

struct RegisterOptions {
    double time = 0.0;
    /// Pre-placement heightmap, used for the support surface height.
    const heightmap::Heightmap* before = nullptr;
    std::size_t yaw_starts = 16;      ///< initial rotations about z, evenly spaced
    std::size_t coarse_points = 1000;  ///< surface subsample used for the yaw starts
    std::size_t refine_starts = 3;     ///< lowest-residual starts refined with all points
    double max_rms = 0.005;      ///< registrations above this residual are low-confidence
    rgbd::IcpOptions icp;
};

/**
 * @brief Aligns the model cloud (object frame) to the newly visible surfaces
 * and appends the object to the state.
 *
 * A subsample of the visible points is registered onto the model from each
 * yaw start at the centroid alignment; the refine_starts lowest-residual
 * starts are refined with all points and the best of those wins. Throws InvalidArgument
 * on a duplicate id, fewer than 10 model points, or empty surfaces.
 */
const TrackedObject& register_object(StorageState& state, const std::string& object_id,
                                     const rgbd::PointCloud& model_cloud, const rgbd::PointCloud& new_surfaces,
                                     const RegisterOptions& options = {});

/// Highest known height among heightmap pixel centers inside the xy footprint
/// of box; 0 (bin floor) when none.
double support_surface_height(const heightmap::Heightmap& before, const Aabb& box);

struct GraspedBox {
    Aabb box;  ///< in the gripper frame
    std::size_t points = 0;
};

/**
 * @brief Tight box around the held object in the gripper frame.
 *
 * Each view is background-subtracted against the matching empty-gripper view;
 * region_masks (optional, one per view) restrict the pixels considered.
 * Throws InvalidArgument when no foreground point remains.
 */
GraspedBox estimate_grasped_bbox(std::span<const rgbd::RgbdFrame> views, std::span<const rgbd::RgbdFrame> empty_views,
                                 const rgbd::RigidTransform& gripper_pose, std::span<const Mask> region_masks = {},
                                 const rgbd::BackgroundTolerance& tolerance = {});

/// Falloff length for proposals outside the target footprint.
inline constexpr double kTargetDecay = 0.05;

/// xy distance from p to the footprint of box; 0 inside.
double footprint_distance(const Aabb& box, const Eigen::Vector3d& p);

/**
 * @brief Scales affordance by exp(-footprint distance / kTargetDecay) and
 * stable-sorts by affordance descending. Throws InvalidArgument for an
 * unknown target.
 */
std::vector<planner::Candidate> prioritize_for_target(std::vector<planner::Candidate> proposals,
                                                      const StorageState& state, const std::string& target_id);

}  // namespace arcpick::state_tracker
