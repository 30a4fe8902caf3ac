#include "arcpick/rgbd.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "arcpick/kdtree.hpp"

namespace arcpick::rgbd {

void CameraIntrinsics::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw CalibrationError("focal lengths must be positive");
    if (width == 0 || height == 0) throw CalibrationError("image size must be nonzero");
    if (!(cx >= 0.0 && cx < static_cast<double>(width)) || !(cy >= 0.0 && cy < static_cast<double>(height)))
        throw CalibrationError("principal point outside the image");
}

RigidTransform RigidTransform::inverse() const {
    RigidTransform inv;
    inv.rotation = rotation.transpose();
    inv.translation = -(inv.rotation * translation);
    return inv;
}

RigidTransform RigidTransform::compose(const RigidTransform& other) const {
    RigidTransform out;
    out.rotation = rotation * other.rotation;
    out.translation = rotation * other.translation + translation;
    return out;
}

bool RigidTransform::is_valid(double tol) const {
    const double ortho = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    return ortho <= tol && std::abs(rotation.determinant() - 1.0) <= tol && translation.allFinite();
}

void RgbdFrame::validate() const {
    intrinsics.validate();
    if (depth.rows() != intrinsics.height || depth.cols() != intrinsics.width)
        throw CalibrationError("depth image is " + std::to_string(depth.cols()) + "x" + std::to_string(depth.rows()) +
                               " but intrinsics expect " + std::to_string(intrinsics.width) + "x" +
                               std::to_string(intrinsics.height));
    if (color.rows() != depth.rows() || color.cols() != depth.cols()) throw CalibrationError("color and depth dimensions differ");
    for (float d : depth.data())
        if (!(d >= 0.0f && d < 10.0f)) throw CalibrationError("depth value outside [0, 10) m");
}

void PointCloud::push_back(const Eigen::Vector3d& p, const Rgb& color, SourcePixel src) {
    points.push_back(p);
    colors.push_back(color);
    source_pixels.push_back(src);
}

PointCloud merge(const std::vector<PointCloud>& clouds) {
    PointCloud out;
    bool all_normals = !clouds.empty();
    for (const auto& c : clouds) all_normals = all_normals && (c.has_normals() || c.empty());
    for (const auto& c : clouds) {
        const std::size_t frame_offset = out.viewpoints.size();
        out.points.insert(out.points.end(), c.points.begin(), c.points.end());
        out.colors.insert(out.colors.end(), c.colors.begin(), c.colors.end());
        for (auto sp : c.source_pixels) {
            sp.frame += frame_offset;
            out.source_pixels.push_back(sp);
        }
        if (all_normals) {
            out.normals.insert(out.normals.end(), c.normals.begin(), c.normals.end());
            out.normal_valid.insert(out.normal_valid.end(), c.normal_valid.begin(), c.normal_valid.end());
        }
        out.viewpoints.insert(out.viewpoints.end(), c.viewpoints.begin(), c.viewpoints.end());
    }
    return out;
}

PointCloud project_to_cloud(const RgbdFrame& frame, std::size_t frame_id) {
    frame.validate();
    const auto& k = frame.intrinsics;
    PointCloud cloud;
    cloud.viewpoints.assign(frame_id + 1, frame.pose.translation);
    for (std::size_t r = 0; r < k.height; ++r) {
        for (std::size_t c = 0; c < k.width; ++c) {
            const double z = frame.depth(r, c);
            if (z <= 0.0) continue;
            const Eigen::Vector3d cam((static_cast<double>(c) - k.cx) * z / k.fx, (static_cast<double>(r) - k.cy) * z / k.fy,
                                      z);
            cloud.push_back(frame.pose.apply(cam), frame.color(r, c),
                            SourcePixel{frame_id, static_cast<long>(r), static_cast<long>(c)});
        }
    }
    return cloud;
}

Eigen::Vector3d project_to_pixel(const Eigen::Vector3d& world, const CameraIntrinsics& k, const CameraPose& pose) {
    const Eigen::Vector3d cam = pose.inverse().apply(world);
    return {k.fx * cam.x() / cam.z() + k.cx, k.fy * cam.y() / cam.z() + k.cy, cam.z()};
}

PointCloud estimate_normals(const PointCloud& cloud, const NormalOptions& options) {
    if (cloud.empty()) throw InvalidArgument("estimate_normals: empty cloud");
    if (!(options.radius > 0.0)) throw InvalidArgument("estimate_normals: radius must be positive");

    PointCloud out = cloud;
    const std::size_t n = cloud.size();
    out.normals.assign(n, Eigen::Vector3d::Zero());
    out.normal_valid.assign(n, 0);

    const KdTree3 tree(cloud.points);
    std::vector<std::size_t> nbrs;
    for (std::size_t i = 0; i < n; ++i) {
        tree.radius_search(cloud.points[i], options.radius, nbrs);
        if (nbrs.size() < options.min_neighbors) continue;

        Eigen::Vector3d mean = Eigen::Vector3d::Zero();
        for (std::size_t j : nbrs) mean += cloud.points[j];
        mean /= static_cast<double>(nbrs.size());
        Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
        for (std::size_t j : nbrs) {
            const Eigen::Vector3d d = cloud.points[j] - mean;
            cov.noalias() += d * d.transpose();
        }
        const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
        // Eigenvalues ascend; a rank < 2 neighborhood (collinear points) has no defined plane.
        if (eig.eigenvalues()(1) <= 1e-18 * std::max(1.0, eig.eigenvalues()(2))) continue;
        Eigen::Vector3d normal = eig.eigenvectors().col(0).normalized();

        Eigen::Vector3d viewpoint = options.fallback_viewpoint;
        if (i < cloud.source_pixels.size() && cloud.source_pixels[i].frame < cloud.viewpoints.size())
            viewpoint = cloud.viewpoints[cloud.source_pixels[i].frame];
        if (normal.dot(viewpoint - cloud.points[i]) < 0.0) normal = -normal;

        out.normals[i] = normal;
        out.normal_valid[i] = 1;
    }
    return out;
}

Mask background_subtract(const RgbdFrame& scene, const RgbdFrame& empty, const BackgroundTolerance& tol) {
    scene.validate();
    empty.validate();
    const auto& a = scene.intrinsics;
    const auto& b = empty.intrinsics;
    const bool same_k = a.width == b.width && a.height == b.height && std::abs(a.fx - b.fx) < 1e-9 &&
                        std::abs(a.fy - b.fy) < 1e-9 && std::abs(a.cx - b.cx) < 1e-9 && std::abs(a.cy - b.cy) < 1e-9;
    const bool same_pose = (scene.pose.rotation - empty.pose.rotation).cwiseAbs().maxCoeff() < 1e-9 &&
                           (scene.pose.translation - empty.pose.translation).cwiseAbs().maxCoeff() < 1e-9;
    if (!same_k || !same_pose) throw CalibrationError("background_subtract: frames have different calibration");

    Mask mask(a.height, a.width, 0);
    const double color_tol2 = tol.color * tol.color;
    for (std::size_t r = 0; r < a.height; ++r) {
        for (std::size_t c = 0; c < a.width; ++c) {
            const double dd = std::abs(static_cast<double>(scene.depth(r, c)) - static_cast<double>(empty.depth(r, c)));
            double c2 = 0.0;
            for (int ch = 0; ch < 3; ++ch) {
                const double d = (static_cast<double>(scene.color(r, c)[ch]) - static_cast<double>(empty.color(r, c)[ch])) / 255.0;
                c2 += d * d;
            }
            mask(r, c) = (dd > tol.depth || c2 > color_tol2) ? 1 : 0;
        }
    }
    return mask;
}

HoleFillResult fill_depth_holes(const RgbdFrame& frame, int max_iterations) {
    HoleFillResult result{frame, false, 0};
    auto& depth = result.frame.depth;
    const bool any_valid = std::any_of(depth.data().begin(), depth.data().end(), [](float d) { return d > 0.0f; });
    if (!any_valid) {
        result.all_holes = true;
        return result;
    }

    const long rows = static_cast<long>(depth.rows());
    const long cols = static_cast<long>(depth.cols());
    std::vector<std::pair<std::size_t, float>> updates;
    std::vector<float> vals;
    for (int it = 0; it < max_iterations; ++it) {
        updates.clear();
        for (long r = 0; r < rows; ++r) {
            for (long c = 0; c < cols; ++c) {
                if (depth(r, c) > 0.0f) continue;
                vals.clear();
                for (long dr = -1; dr <= 1; ++dr)
                    for (long dc = -1; dc <= 1; ++dc) {
                        if ((dr == 0 && dc == 0) || !depth.in_bounds(r + dr, c + dc)) continue;
                        const float v = depth(r + dr, c + dc);
                        if (v > 0.0f) vals.push_back(v);
                    }
                if (vals.empty()) continue;
                // Lower median: always one of the neighbor values.
                const auto mid = vals.begin() + static_cast<long>((vals.size() - 1) / 2);
                std::nth_element(vals.begin(), mid, vals.end());
                updates.emplace_back(static_cast<std::size_t>(r * cols + c), *mid);
            }
        }
        if (updates.empty()) break;
        for (const auto& [idx, v] : updates) depth.data()[idx] = v;
        result.iterations = it + 1;
    }
    return result;
}

RigidTransform fit_rigid_transform(const std::vector<Eigen::Vector3d>& source, const std::vector<Eigen::Vector3d>& target) {
    if (source.size() != target.size()) throw InvalidArgument("fit_rigid_transform: size mismatch");
    if (source.size() < 3) throw InvalidArgument("fit_rigid_transform: need at least 3 pairs");
    const double n = static_cast<double>(source.size());
    Eigen::Vector3d cs = Eigen::Vector3d::Zero(), ct = Eigen::Vector3d::Zero();
    for (std::size_t i = 0; i < source.size(); ++i) {
        cs += source[i];
        ct += target[i];
    }
    cs /= n;
    ct /= n;
    Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
    for (std::size_t i = 0; i < source.size(); ++i) h.noalias() += (source[i] - cs) * (target[i] - ct).transpose();

    const Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
    if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0) d(2, 2) = -1.0;  // reflection guard
    RigidTransform t;
    t.rotation = svd.matrixV() * d * svd.matrixU().transpose();
    t.translation = ct - t.rotation * cs;
    return t;
}

PointCloud transform_cloud(const PointCloud& cloud, const RigidTransform& t) {
    PointCloud out = cloud;
    for (auto& p : out.points) p = t.apply(p);
    for (auto& n : out.normals) n = t.rotation * n;
    for (auto& v : out.viewpoints) v = t.apply(v);
    return out;
}

namespace {

struct Correspondences {
    std::vector<Eigen::Vector3d> source;
    std::vector<Eigen::Vector3d> target;
    double rms = 0.0;  ///< over all pairs, rejected ones included
};

Correspondences match(const PointCloud& source, const RigidTransform& current, const PointCloud& target,
                      const KdTree3& tree, double rejection_factor) {
    const std::size_t n = source.size();
    std::vector<Eigen::Vector3d> moved(n);
    std::vector<std::size_t> nn(n);
    std::vector<double> dist(n);
    for (std::size_t i = 0; i < n; ++i) {
        moved[i] = current.apply(source.points[i]);
        const auto hit = tree.nearest(moved[i]);
        nn[i] = hit.index;
        dist[i] = std::sqrt(hit.squared_distance);
    }
    std::vector<double> sorted = dist;
    const auto mid = sorted.begin() + static_cast<long>(n / 2);
    std::nth_element(sorted.begin(), mid, sorted.end());
    const double cutoff = rejection_factor * *mid;

    Correspondences out;
    double sum2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sum2 += dist[i] * dist[i];
        if (dist[i] > cutoff) continue;
        out.source.push_back(moved[i]);
        out.target.push_back(target.points[nn[i]]);
    }
    out.rms = std::sqrt(sum2 / static_cast<double>(n));
    return out;
}

}  // namespace

IcpResult icp_register(const PointCloud& source, const PointCloud& target, const IcpOptions& options,
                       const RigidTransform& initial) {
    if (source.size() < 10 || target.size() < 10) throw InvalidArgument("icp_register: clouds need at least 10 points");
    const KdTree3 tree(target.points);

    IcpResult result;
    RigidTransform current = initial;
    RigidTransform best = initial;
    double best_rms = std::numeric_limits<double>::infinity();
    double prev_rms = std::numeric_limits<double>::infinity();
    int rising = 0;

    for (int it = 0; it < options.max_iterations; ++it) {
        const auto corr = match(source, current, target, tree, options.rejection_factor);
        result.iterations = it + 1;
        if (corr.rms < best_rms) {
            best_rms = corr.rms;
            best = current;
        }
        if (corr.rms > prev_rms) {
            if (++rising >= options.divergence_patience) {
                result.diverged = true;
                result.transform = best;
                result.rms = best_rms;
                return result;
            }
        } else {
            rising = 0;
        }
        if (std::abs(prev_rms - corr.rms) < options.tolerance || corr.rms == 0.0) {
            result.converged = true;
            break;
        }
        prev_rms = corr.rms;
        if (corr.source.size() < 3) break;
        current = fit_rigid_transform(corr.source, corr.target).compose(current);
    }

    const auto final_corr = match(source, current, target, tree, options.rejection_factor);
    if (final_corr.rms <= best_rms) {
        best = current;
        best_rms = final_corr.rms;
    }
    result.transform = best;
    result.rms = best_rms;
    return result;
}

}  // namespace arcpick::rgbd
