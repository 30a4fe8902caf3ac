#include "arcpick/synthetic.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace arcpick::synthetic {

namespace {

constexpr double kEps = 1e-12;

std::optional<double> intersect_box(const Box& b, const Eigen::Vector3d& o, const Eigen::Vector3d& d) {
    const Eigen::Vector3d lo = b.rotation.transpose() * (o - b.center);
    const Eigen::Vector3d ld = b.rotation.transpose() * d;
    double t0 = -std::numeric_limits<double>::infinity();
    double t1 = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        const double h = b.half_extents[a];
        if (std::abs(ld[a]) < kEps) {
            if (lo[a] < -h || lo[a] > h) return std::nullopt;
            continue;
        }
        double ta = (-h - lo[a]) / ld[a];
        double tb = (h - lo[a]) / ld[a];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
        if (t0 > t1) return std::nullopt;
    }
    if (t0 > kEps) return t0;
    if (t1 > kEps) return t1;
    return std::nullopt;
}

std::optional<double> intersect_sphere(const Sphere& s, const Eigen::Vector3d& o, const Eigen::Vector3d& d) {
    const Eigen::Vector3d oc = o - s.center;
    const double a = d.squaredNorm();
    const double b = oc.dot(d);
    const double c = oc.squaredNorm() - s.radius * s.radius;
    const double disc = b * b - a * c;
    if (disc < 0.0) return std::nullopt;
    const double sq = std::sqrt(disc);
    const double t0 = (-b - sq) / a;
    if (t0 > kEps) return t0;
    const double t1 = (-b + sq) / a;
    if (t1 > kEps) return t1;
    return std::nullopt;
}

}  // namespace

std::optional<Hit> Scene::cast(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) const {
    std::optional<Hit> best;
    const auto consider = [&](std::optional<double> t, const Rgb& color, bool depth) {
        if (t && (!best || *t < best->t)) best = Hit{*t, color, depth};
    };
    for (const auto& b : boxes) consider(intersect_box(b, origin, dir), b.color, b.returns_depth);
    for (const auto& s : spheres) consider(intersect_sphere(s, origin, dir), s.color, s.returns_depth);
    if (floor_z && std::abs(dir.z()) > kEps) {
        const double t = (*floor_z - origin.z()) / dir.z();
        if (t > kEps) consider(t, floor_color, true);
    }
    return best;
}

rgbd::RgbdFrame Scene::render(const rgbd::CameraIntrinsics& k, const rgbd::CameraPose& pose) const {
    k.validate();
    rgbd::RgbdFrame frame;
    frame.intrinsics = k;
    frame.pose = pose;
    frame.depth = DepthImage(k.height, k.width, 0.0f);
    frame.color = ColorImage(k.height, k.width, Rgb{0, 0, 0});
    for (std::size_t r = 0; r < k.height; ++r) {
        for (std::size_t c = 0; c < k.width; ++c) {
            const Eigen::Vector3d ray_cam((static_cast<double>(c) - k.cx) / k.fx, (static_cast<double>(r) - k.cy) / k.fy, 1.0);
            const Eigen::Vector3d dir = pose.rotation * ray_cam;
            const auto hit = cast(pose.translation, dir);
            if (!hit) continue;
            frame.color(r, c) = hit->color;
            // With ray_cam.z == 1 the ray parameter equals the optical-axis depth.
            if (hit->returns_depth && hit->t < 10.0) frame.depth(r, c) = static_cast<float>(hit->t);
        }
    }
    return frame;
}

heightmap::Heightmap Scene::render_heightmap(const heightmap::BinGeometry& bin, double resolution) const {
    const auto [rows, cols] = heightmap::grid_shape(bin, resolution);
    heightmap::Heightmap hm;
    hm.resolution = resolution;
    hm.bin = bin;
    hm.height = Grid<float>(rows, cols, 0.0f);
    hm.color = ColorImage(rows, cols, Rgb{0, 0, 0});
    hm.known = Mask(rows, cols, 0);
    const double top = bin.origin.z() + 10.0;
    const Eigen::Vector3d down(0.0, 0.0, -1.0);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            const Eigen::Vector3d o = bin.origin + Eigen::Vector3d(static_cast<double>(c) * resolution,
                                                                   static_cast<double>(r) * resolution, 0.0);
            const auto hit = cast(Eigen::Vector3d(o.x(), o.y(), top), down);
            if (!hit || !hit->returns_depth) continue;
            hm.height(r, c) = static_cast<float>(std::max(0.0, top - hit->t - bin.origin.z()));
            hm.color(r, c) = hit->color;
            hm.known(r, c) = 1;
        }
    }
    return hm;
}

rgbd::CameraPose look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up_hint) {
    const Eigen::Vector3d z = (target - eye).normalized();
    Eigen::Vector3d x = up_hint.cross(z);
    if (x.norm() < 1e-9) x = Eigen::Vector3d::UnitX().cross(z);
    x.normalize();
    const Eigen::Vector3d y = z.cross(x);
    rgbd::CameraPose pose;
    pose.rotation.col(0) = x;
    pose.rotation.col(1) = y;
    pose.rotation.col(2) = z;
    pose.translation = eye;
    return pose;
}

Eigen::Matrix3d yaw(double radians) { return Eigen::AngleAxisd(radians, Eigen::Vector3d::UnitZ()).toRotationMatrix(); }

rgbd::CameraIntrinsics make_intrinsics(std::size_t width, std::size_t height, double horizontal_fov_rad) {
    rgbd::CameraIntrinsics k;
    k.width = width;
    k.height = height;
    k.fx = k.fy = static_cast<double>(width) / 2.0 / std::tan(horizontal_fov_rad / 2.0);
    k.cx = (static_cast<double>(width) - 1.0) / 2.0;
    k.cy = (static_cast<double>(height) - 1.0) / 2.0;
    return k;
}

Box resting_box(double x, double y, double size_x, double size_y, double size_z, double yaw_rad, double base, Rgb color) {
    Box b;
    b.center = Eigen::Vector3d(x, y, base + size_z / 2.0);
    b.half_extents = Eigen::Vector3d(size_x, size_y, size_z) / 2.0;
    b.rotation = yaw(yaw_rad);
    b.color = color;
    return b;
}

std::vector<Eigen::Vector3d> sample_box_surface(const Box& box, std::size_t count, Rng& rng) {
    const Eigen::Vector3d e = box.half_extents * 2.0;
    const double areas[3] = {e.y() * e.z(), e.x() * e.z(), e.x() * e.y()};  // faces normal to x, y, z
    const double total = 2.0 * (areas[0] + areas[1] + areas[2]);
    std::vector<Eigen::Vector3d> pts;
    pts.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        double u = rng.uniform() * total;
        int axis = 0;
        while (axis < 2 && u >= 2.0 * areas[axis]) u -= 2.0 * areas[axis++];
        const double side = u < areas[axis] ? -1.0 : 1.0;
        Eigen::Vector3d local;
        for (int a = 0; a < 3; ++a)
            local[a] = a == axis ? side * box.half_extents[a] : rng.uniform(-box.half_extents[a], box.half_extents[a]);
        pts.push_back(box.rotation * local + box.center);
    }
    return pts;
}

Scene random_bin_scene(const heightmap::BinGeometry& bin, Rng& rng, const ClutterParams& params) {
    bin.validate();
    if (params.max_objects < params.min_objects) throw InvalidArgument("random_bin_scene: bad object count range");
    Scene scene;
    scene.floor_z = bin.origin.z();
    const std::size_t wanted = params.min_objects + rng.index(params.max_objects - params.min_objects + 1);
    std::vector<std::pair<Eigen::Vector2d, double>> placed;  // footprint circles
    for (int attempt = 0; attempt < 500 && scene.boxes.size() < wanted; ++attempt) {
        const double sx = rng.uniform(params.min_size, params.max_size);
        const double sy = rng.uniform(params.min_size, std::min(params.max_size, 0.06));
        const double sz = rng.uniform(params.min_height, params.max_height);
        const double radius = 0.5 * std::hypot(sx, sy);
        const double lo_x = radius + 0.005, hi_x = bin.x_extent - radius - 0.005;
        const double lo_y = radius + 0.005, hi_y = bin.y_extent - radius - 0.005;
        if (lo_x >= hi_x || lo_y >= hi_y) continue;
        const Eigen::Vector2d c(rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y));
        const double yaw_rad = rng.uniform(0.0, std::numbers::pi);
        bool clear = true;
        for (const auto& [oc, orad] : placed)
            if ((oc - c).norm() < orad + radius + params.min_gap) clear = false;
        if (!clear) continue;
        placed.emplace_back(c, radius);
        const Rgb color{static_cast<std::uint8_t>(60 + rng.index(190)), static_cast<std::uint8_t>(60 + rng.index(190)),
                        static_cast<std::uint8_t>(60 + rng.index(190))};
        scene.boxes.push_back(resting_box(bin.origin.x() + c.x(), bin.origin.y() + c.y(), sx, sy, sz, yaw_rad,
                                          bin.origin.z(), color));
    }
    return scene;
}

std::vector<CameraView> bin_cameras(const heightmap::BinGeometry& bin, std::size_t width, std::size_t height) {
    const Eigen::Vector3d center = bin.origin + Eigen::Vector3d(bin.x_extent / 2.0, bin.y_extent / 2.0, 0.0);
    const auto k = make_intrinsics(width, height, std::numbers::pi / 4.0);
    std::vector<CameraView> views;
    for (double side : {-1.0, 1.0}) {
        const Eigen::Vector3d eye = center + Eigen::Vector3d(0.12 * side, 0.03, 0.7);
        views.push_back({k, look_at(eye, center)});
    }
    return views;
}

}  // namespace arcpick::synthetic
