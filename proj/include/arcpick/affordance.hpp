#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <numbers>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "arcpick/core.hpp"
#include "arcpick/heightmap.hpp"
#include "arcpick/rgbd.hpp"

namespace arcpick::affordance {

/// Declaration order is the planner's tie-break order.
enum class PrimitiveKind { suction_down, suction_side, grasp_down, flush_grasp };

std::string_view to_string(PrimitiveKind kind);  ///< "sd", "ss", "gd", "fg"
PrimitiveKind parse_primitive(std::string_view code);
inline bool is_suction(PrimitiveKind k) { return k == PrimitiveKind::suction_down || k == PrimitiveKind::suction_side; }

enum class MapKind : std::uint32_t { suction = 0, grasp = 1 };
enum class MapSource { baseline, learned_file };

/// Dense affordances in [0, 1]. Grasp maps carry the gripper angle.
struct AffordanceMap {
    Grid<float> values;
    MapKind kind = MapKind::suction;
    std::optional<double> angle;
    MapSource source = MapSource::baseline;

    /// Throws InvalidArgument when values leave [0, 1] or angle presence disagrees with kind.
    void validate() const;
};

struct SuctionProposal {
    Eigen::Vector3d point;
    Eigen::Vector3d normal;
    double affordance = 0.0;
    PrimitiveKind primitive = PrimitiveKind::suction_down;
    std::size_t point_index = 0;
    rgbd::SourcePixel pixel;
};

struct GraspProposal {
    Eigen::Vector3d midpoint;
    double angle = 0.0;
    std::size_t angle_index = 0;
    double width = 0.0;
    double affordance = 0.0;
    PrimitiveKind primitive = PrimitiveKind::grasp_down;
    PixelIndex pixel;
};

struct SuctionBaselineParams {
    double window_radius = 0.01;
    double beta = 50.0;
    std::size_t min_support = 10;  ///< valid normals needed in the window, else the point scores 0
};

/**
 * @brief Normal-variance suction heuristic.
 *
 * var(p) = trace of the covariance of the valid unit normals within
 * window_radius of p, i.e. 1 - |mean normal|^2; affordance = exp(-beta * var).
 * Points without a valid normal, or with fewer than min_support valid normals
 * in the window, score 0.
 */
std::vector<double> suction_baseline(const rgbd::PointCloud& cloud, const SuctionBaselineParams& params = {});

struct GripperParams {
    double max_opening = 0.07;
    double finger_width = 0.02;       ///< free slot needed beside the object for each finger
    double finger_span = 0.02;        ///< finger extent across the closing axis
    double finger_clearance = 0.015;  ///< fingers must reach this far below the grasp height
    double width_clearance = 0.01;    ///< added to the measured object width when opening
};

/**
 * @brief One hill test along the closing axis at a pixel.
 *
 * Object extent is measured on the axis line, finger slots over the full
 * finger span. score = depth * centering * snug * parallel, where parallel
 * compares the extents on lines offset by a quarter finger span each way.
 */
struct ProfileMeasurement {
    bool hill = false;
    double object_width = 0.0;  ///< meters along the closing axis
    double score = 0.0;         ///< in [0, 1]
};

/**
 * @brief Precomputed integer sampling offsets along each gripper closing axis.
 *
 * Offsets for angle i + n/2 are the exact 90-degree rotation of those for
 * angle i, so quarter-turn rotations of a scene permute the per-angle maps
 * exactly. Samples beyond the heightmap read as bin floor (height 0).
 */
class ProfileSampler {
public:
    ProfileSampler(const heightmap::RotationSet& rotations, const GripperParams& gripper, double resolution);

    ProfileMeasurement measure(const Grid<float>& height, long row, long col, std::size_t angle_index) const;

    std::size_t angle_count() const { return offsets_.size(); }
    const GripperParams& gripper() const { return gripper_; }

private:
    GripperParams gripper_;
    double resolution_;
    long reach_;      // samples per side
    long slot_px_;
    long band_;       // samples per side across the axis
    std::vector<std::vector<PixelIndex>> offsets_;  // [angle][(k + reach_) * (2 band_ + 1) + m + band_]

    const PixelIndex& offset(std::size_t angle, long k, long m) const {
        return offsets_[angle][static_cast<std::size_t>((k + reach_) * (2 * band_ + 1) + m + band_)];
    }
};

/// Hill-profile grasp heuristic; one map per rotation angle, in the heightmap frame.
std::vector<AffordanceMap> grasp_baseline(const heightmap::Heightmap& hm, const heightmap::RotationSet& rotations,
                                          const GripperParams& gripper = {});

/// Binary map file: "AFFD", u32 version 1, u32 H, u32 W, u32 kind, f32 angle (NaN for suction), H*W f32.
void save_affordance_map(const std::filesystem::path& path, const AffordanceMap& map);

/// Throws FormatError on bad magic, truncation, non-finite values or dimension mismatch.
/// Values are clamped to [0, 1] and the source is marked learned_file.
AffordanceMap load_learned_map(const std::filesystem::path& path, std::optional<std::size_t> expected_rows = std::nullopt,
                               std::optional<std::size_t> expected_cols = std::nullopt);

struct SuctionProposalParams {
    double down_angle_threshold = 40.0 * std::numbers::pi / 180.0;  ///< radians from +z
};

/**
 * @brief Ranked suction proposals.
 *
 * foreground_masks are indexed by source frame id; an empty span disables
 * background filtering. Points with invalid normals never become proposals.
 * Sorted by affordance descending, ties by point index.
 */
std::vector<SuctionProposal> make_suction_proposals(const rgbd::PointCloud& cloud, std::span<const double> affordances,
                                                    std::span<const Mask> foreground_masks,
                                                    const SuctionProposalParams& params = {});

struct GraspProposalParams {
    GripperParams gripper;
    double min_affordance = 0.0;  ///< proposals need affordance strictly above this
};

/**
 * @brief Ranked grasp proposals, one per (pixel, angle) with positive affordance.
 *
 * maps[i] must hold angle i of the rotation set. foreground may be empty to
 * disable background filtering. Sorted by affordance descending, ties by
 * linear pixel index then angle index.
 */
std::vector<GraspProposal> make_grasp_proposals(const heightmap::Heightmap& hm, std::span<const AffordanceMap> maps,
                                                const heightmap::BinGeometry& bin, const Mask& foreground,
                                                const GraspProposalParams& params = {});

/// Distance from a world point to the nearest bin wall in the xy plane.
double wall_distance(const heightmap::BinGeometry& bin, const Eigen::Vector3d& p);

struct BaselineOptions {
    double resolution = 0.002;
    std::size_t rotations = 16;
    rgbd::NormalOptions normals;
    rgbd::BackgroundTolerance background;
    SuctionBaselineParams suction;
    SuctionProposalParams suction_proposals;
    GraspProposalParams grasp;
};

struct BaselineResult {
    rgbd::PointCloud cloud;           ///< merged scene cloud inside the bin volume, with normals
    std::vector<Mask> foreground;     ///< per input frame
    std::vector<double> suction;      ///< per cloud point
    std::vector<SuctionProposal> suction_proposals;
    heightmap::Heightmap heightmap;   ///< filled scene heightmap
    Mask heightmap_foreground;
    std::vector<AffordanceMap> grasp_maps;
    std::vector<GraspProposal> grasp_proposals;
};

/**
 * @brief Full heuristic pipeline from registered RGB-D views of the scene and
 * of the empty bin (same cameras, same order) to ranked proposals.
 */
BaselineResult run_baselines(std::span<const rgbd::RgbdFrame> frames, std::span<const rgbd::RgbdFrame> empty_frames,
                             const heightmap::BinGeometry& bin, const BaselineOptions& options = {});

/// Precomputed network outputs: one suction map per camera frame, one grasp map
/// per rotation angle on the scene heightmap grid.
struct LearnedMaps {
    std::vector<AffordanceMap> suction;
    std::vector<AffordanceMap> grasp;
};

/// Same preprocessing as run_baselines with the affordances read from maps.
BaselineResult run_learned(std::span<const rgbd::RgbdFrame> frames, std::span<const rgbd::RgbdFrame> empty_frames,
                           const heightmap::BinGeometry& bin, const LearnedMaps& maps, const BaselineOptions& options = {});

}  // namespace arcpick::affordance
