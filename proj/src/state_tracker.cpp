#include "arcpick/state_tracker.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "arcpick/kdtree.hpp"

namespace arcpick::state_tracker {

namespace {

Eigen::Vector3d centroid(std::span<const Eigen::Vector3d> pts) {
    Eigen::Vector3d c = Eigen::Vector3d::Zero();
    for (const auto& p : pts) c += p;
    return c / static_cast<double>(pts.size());
}

/// RMS nearest-neighbor distance of transformed source points, no rejection.
double residual(const std::vector<Eigen::Vector3d>& source, const rgbd::RigidTransform& t, const KdTree3& target) {
    double sum = 0.0;
    for (const auto& p : source) sum += target.nearest(t.apply(p)).squared_distance;
    return std::sqrt(sum / static_cast<double>(source.size()));
}

}  // namespace

Aabb Aabb::of(std::span<const Eigen::Vector3d> points) {
    if (points.empty()) throw InvalidArgument("Aabb::of: no points");
    Aabb b{points.front(), points.front()};
    for (const auto& p : points) {
        b.min = b.min.cwiseMin(p);
        b.max = b.max.cwiseMax(p);
    }
    return b;
}

const TrackedObject* StorageState::find(const std::string& object_id) const {
    for (const auto& o : objects)
        if (o.object_id == object_id) return &o;
    return nullptr;
}

std::pair<Mask, std::size_t> largest_component(const Mask& mask) {
    const std::size_t rows = mask.rows(), cols = mask.cols();
    Grid<std::uint32_t> label(rows, cols, 0);
    std::vector<std::size_t> sizes{0};
    std::vector<std::pair<long, long>> stack;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
            if (!mask(r, c) || label(r, c)) continue;
            const auto id = static_cast<std::uint32_t>(sizes.size());
            std::size_t size = 0;
            stack.assign(1, {static_cast<long>(r), static_cast<long>(c)});
            label(r, c) = id;
            while (!stack.empty()) {
                const auto [y, x] = stack.back();
                stack.pop_back();
                ++size;
                for (long dy = -1; dy <= 1; ++dy)
                    for (long dx = -1; dx <= 1; ++dx) {
                        const long ny = y + dy, nx = x + dx;
                        if (!mask.in_bounds(ny, nx)) continue;
                        const auto uy = static_cast<std::size_t>(ny), ux = static_cast<std::size_t>(nx);
                        if (!mask(uy, ux) || label(uy, ux)) continue;
                        label(uy, ux) = id;
                        stack.emplace_back(ny, nx);
                    }
            }
            sizes.push_back(size);
        }
    Mask out(rows, cols, 0);
    const std::size_t count = sizes.size() - 1;
    if (count == 0) return {out, 0};
    const auto best = static_cast<std::uint32_t>(std::max_element(sizes.begin() + 1, sizes.end()) - sizes.begin());
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = label.data()[i] == best ? 1 : 0;
    return {out, count};
}

LocalizeResult diff_localize(const rgbd::RgbdFrame& before, const rgbd::RgbdFrame& after,
                             const rgbd::BackgroundTolerance& tolerance) {
    Mask changed = rgbd::background_subtract(after, before, tolerance);
    // Pixels without depth after the change cannot contribute surface points.
    for (std::size_t r = 0; r < changed.rows(); ++r)
        for (std::size_t c = 0; c < changed.cols(); ++c)
            if (!(after.depth(r, c) > 0.0f)) changed(r, c) = 0;

    LocalizeResult out;
    std::tie(out.component, out.components) = largest_component(changed);
    out.multiple = out.components > 1;
    if (out.components == 0) return out;
    const auto cloud = rgbd::project_to_cloud(after);
    out.surfaces.viewpoints = cloud.viewpoints;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto& px = cloud.source_pixels[i];
        if (out.component(static_cast<std::size_t>(px.row), static_cast<std::size_t>(px.col)))
            out.surfaces.push_back(cloud.points[i], cloud.colors[i], px);
    }
    out.empty = out.surfaces.empty();
    return out;
}

const TrackedObject& register_object(StorageState& state, const std::string& object_id,
                                     const rgbd::PointCloud& model_cloud, const rgbd::PointCloud& new_surfaces,
                                     const RegisterOptions& options) {
    if (state.find(object_id)) throw InvalidArgument("register_object: duplicate object id '" + object_id + "'");
    if (model_cloud.size() < 10) throw InvalidArgument("register_object: model cloud needs at least 10 points");
    if (new_surfaces.empty()) throw InvalidArgument("register_object: no new surfaces to register");
    if (options.yaw_starts == 0) throw InvalidArgument("register_object: yaw_starts must be positive");

    const Eigen::Vector3d model_c = centroid(model_cloud.points);
    const Eigen::Vector3d seen_c = centroid(new_surfaces.points);
    const KdTree3 model_tree(model_cloud.points);

    TrackedObject obj;
    obj.object_id = object_id;
    obj.placed_time = options.time;
    obj.pose.translation = seen_c - model_c;
    obj.low_confidence = true;
    obj.rms = std::numeric_limits<double>::infinity();

    if (new_surfaces.size() >= 10) {
        // Yaw starts run on an even subsample; the best few are refined on all points.
        const std::size_t stride = std::max<std::size_t>(1, (new_surfaces.size() + options.coarse_points - 1) /
                                                                std::max<std::size_t>(1, options.coarse_points));
        rgbd::PointCloud coarse;
        for (std::size_t i = 0; i < new_surfaces.size(); i += stride) coarse.push_back(new_surfaces.points[i]);
        if (coarse.size() < 10) coarse = new_surfaces;

        // Surfaces -> model: every visible point has a counterpart on the
        // model, while hidden model faces have none.
        std::vector<std::pair<double, rgbd::RigidTransform>> starts;
        for (std::size_t k = 0; k < options.yaw_starts; ++k) {
            const double yaw = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(options.yaw_starts);
            rgbd::RigidTransform init;
            init.rotation = Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix();
            init.translation = model_c - init.rotation * seen_c;
            const auto icp = rgbd::icp_register(coarse, model_cloud, options.icp, init);
            if (!icp.diverged) starts.emplace_back(residual(coarse.points, icp.transform, model_tree), icp.transform);
        }
        std::stable_sort(starts.begin(), starts.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });
        starts.resize(std::min(starts.size(), options.refine_starts));
        for (const auto& [coarse_rms, t0] : starts) {
            const auto fine = rgbd::icp_register(new_surfaces, model_cloud, options.icp, t0);
            const auto& t = fine.diverged ? t0 : fine.transform;
            const double rms = residual(new_surfaces.points, t, model_tree);
            if (rms < obj.rms) {
                obj.rms = rms;
                obj.pose = t.inverse();
            }
        }
        obj.low_confidence = !(obj.rms <= options.max_rms);
    }
    if (obj.low_confidence) {
        obj.pose = rgbd::RigidTransform::identity();
        obj.pose.translation = seen_c - model_c;
    }

    std::vector<Eigen::Vector3d> posed;
    posed.reserve(model_cloud.size());
    for (const auto& p : model_cloud.points) posed.push_back(obj.pose.apply(p));
    obj.aabb = Aabb::of(posed);
    if (options.before) obj.support_surface_height = support_surface_height(*options.before, obj.aabb);
    state.objects.push_back(std::move(obj));
    return state.objects.back();
}

double support_surface_height(const heightmap::Heightmap& before, const Aabb& box) {
    const double res = before.resolution;
    const Eigen::Vector2d lo = (box.min.head<2>() - before.bin.origin.head<2>()) / res;
    const Eigen::Vector2d hi = (box.max.head<2>() - before.bin.origin.head<2>()) / res;
    const long c0 = std::max(0L, static_cast<long>(std::ceil(lo.x())));
    const long r0 = std::max(0L, static_cast<long>(std::ceil(lo.y())));
    const long c1 = std::min(static_cast<long>(before.cols()) - 1, static_cast<long>(std::floor(hi.x())));
    const long r1 = std::min(static_cast<long>(before.rows()) - 1, static_cast<long>(std::floor(hi.y())));
    double best = 0.0;
    for (long r = r0; r <= r1; ++r)
        for (long c = c0; c <= c1; ++c) {
            const auto ur = static_cast<std::size_t>(r), uc = static_cast<std::size_t>(c);
            if (before.known(ur, uc)) best = std::max(best, static_cast<double>(before.height(ur, uc)));
        }
    return best;
}

GraspedBox estimate_grasped_bbox(std::span<const rgbd::RgbdFrame> views, std::span<const rgbd::RgbdFrame> empty_views,
                                 const rgbd::RigidTransform& gripper_pose, std::span<const Mask> region_masks,
                                 const rgbd::BackgroundTolerance& tolerance) {
    if (views.empty()) throw InvalidArgument("estimate_grasped_bbox: no views");
    if (views.size() != empty_views.size())
        throw InvalidArgument("estimate_grasped_bbox: need one empty-gripper view per view");
    if (!region_masks.empty() && region_masks.size() != views.size())
        throw InvalidArgument("estimate_grasped_bbox: need one region mask per view");

    const auto to_gripper = gripper_pose.inverse();
    std::vector<Eigen::Vector3d> pts;
    for (std::size_t v = 0; v < views.size(); ++v) {
        const Mask fg = rgbd::background_subtract(views[v], empty_views[v], tolerance);
        if (!region_masks.empty() && !region_masks[v].same_shape(fg))
            throw InvalidArgument("estimate_grasped_bbox: region mask does not match its view");
        const auto cloud = rgbd::project_to_cloud(views[v]);
        for (std::size_t i = 0; i < cloud.size(); ++i) {
            const auto r = static_cast<std::size_t>(cloud.source_pixels[i].row);
            const auto c = static_cast<std::size_t>(cloud.source_pixels[i].col);
            if (!fg(r, c) || (!region_masks.empty() && !region_masks[v](r, c))) continue;
            pts.push_back(to_gripper.apply(cloud.points[i]));
        }
    }
    if (pts.empty()) throw InvalidArgument("estimate_grasped_bbox: no foreground points (empty gripper?)");
    return {Aabb::of(pts), pts.size()};
}

double footprint_distance(const Aabb& box, const Eigen::Vector3d& p) {
    const double dx = std::max({box.min.x() - p.x(), 0.0, p.x() - box.max.x()});
    const double dy = std::max({box.min.y() - p.y(), 0.0, p.y() - box.max.y()});
    return std::hypot(dx, dy);
}

std::vector<planner::Candidate> prioritize_for_target(std::vector<planner::Candidate> proposals,
                                                      const StorageState& state, const std::string& target_id) {
    const auto* target = state.find(target_id);
    if (!target) throw InvalidArgument("prioritize_for_target: unknown target '" + target_id + "'");
    for (auto& p : proposals) {
        const double d = footprint_distance(target->aabb, p.position);
        if (d > 0.0) p.affordance *= std::exp(-d / kTargetDecay);
    }
    std::stable_sort(proposals.begin(), proposals.end(),
                     [](const planner::Candidate& a, const planner::Candidate& b) { return a.affordance > b.affordance; });
    return proposals;
}

}  // namespace arcpick::state_tracker
