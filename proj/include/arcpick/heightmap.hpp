#pragma once

#include <Eigen/Core>
#include <optional>
#include <span>
#include <vector>

#include "arcpick/core.hpp"
#include "arcpick/rgbd.hpp"

namespace arcpick::heightmap {

/// Axis-aligned bin: inner volume starts at origin and spans x_extent by y_extent.
struct BinGeometry {
    Eigen::Vector3d origin = Eigen::Vector3d::Zero();
    double x_extent = 0.0;
    double y_extent = 0.0;
    double wall_margin = 0.0;  ///< proposals closer than this to a wall become flush grasps

    void validate() const;
};

/**
 * @brief Orthographic top-down RGB-height image of a bin.
 *
 * Pixel (row, col) is the vertical column centered on
 * origin + (col * resolution, row * resolution). height is measured from
 * the bin bottom; known is 0 where no point landed in the column.
 */
struct Heightmap {
    ColorImage color;
    Grid<float> height;
    Mask known;
    double resolution = 0.002;
    BinGeometry bin;

    std::size_t rows() const { return height.rows(); }
    std::size_t cols() const { return height.cols(); }
};

/// n gripper angles i * pi / n, i in [0, n).
struct RotationSet {
    std::size_t n = 16;
    std::vector<double> angles;

    static RotationSet make(std::size_t n = 16);
};

struct BuildResult {
    Heightmap map;
    bool empty_input = false;
};

/// Grid size for a bin at the given resolution: ceil(extent / resolution).
std::pair<std::size_t, std::size_t> grid_shape(const BinGeometry& bin, double resolution);

/// Max-height column aggregation; the topmost point also provides the color.
/// Equal heights resolve to the lexicographically smallest color, making the
/// result independent of point order.
BuildResult build_heightmap(const std::vector<rgbd::PointCloud>& clouds, const BinGeometry& bin,
                            double resolution = 0.002);

/// Unknown pixels inside the foreground get synthetic_height; everything else is untouched.
Heightmap fill_missing_heights(const Heightmap& hm, const Mask& foreground, double synthetic_height = 0.03);

/**
 * @brief Foreground mask of a scene heightmap against an empty-bin heightmap.
 *
 * A pixel is foreground when its known height differs by more than height_tol,
 * its color differs by more than color_tol, or it is unknown in the scene but
 * known in the empty bin (objects that return no depth).
 */
Mask heightmap_foreground(const Heightmap& scene, const Heightmap& empty, double height_tol = 0.01,
                          double color_tol = 30.0 / 255.0);

/**
 * @brief Unknown columns that at least one view saw as missing depth.
 *
 * The column's floor point is projected into each frame; the column is
 * flagged when it lands on a pixel without depth. Columns hidden behind
 * other surfaces project onto valid depth in every view and stay clear,
 * which separates depthless objects from occlusion shadows.
 */
Mask missing_depth_columns(const Heightmap& hm, std::span<const rgbd::RgbdFrame> frames);

/**
 * @brief Rotate about the map center by angle (radians, x = col toward y = row).
 *
 * Bilinear for height and color, nearest for the known mask. The canvas grows
 * to contain the rotated map unless out_rows/out_cols are given, in which case
 * the result is centered in that canvas. Multiples of 90 degrees are exact
 * index permutations.
 */
Heightmap rotate_heightmap(const Heightmap& hm, double angle, std::optional<std::size_t> out_rows = std::nullopt,
                           std::optional<std::size_t> out_cols = std::nullopt);

/// Same rotation for a bare float grid (bilinear, zero padding).
Grid<float> rotate_grid(const Grid<float>& grid, double angle, std::optional<std::size_t> out_rows = std::nullopt,
                        std::optional<std::size_t> out_cols = std::nullopt);

/// Throws InvalidArgument for out-of-bounds indices.
Eigen::Vector3d pixel_to_world(const Heightmap& hm, long row, long col);

/// Pixel whose column contains the point, if inside the map.
std::optional<PixelIndex> world_to_pixel(const Heightmap& hm, const Eigen::Vector3d& p);

}  // namespace arcpick::heightmap
