#include "arcpick/heightmap.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace arcpick::heightmap {

void BinGeometry::validate() const {
    if (!(x_extent > 0.0) || !(y_extent > 0.0)) throw InvalidArgument("bin extents must be positive");
    if (!(wall_margin >= 0.0) || !(wall_margin < std::min(x_extent, y_extent) / 2.0))
        throw InvalidArgument("wall_margin must be below half the smallest extent");
}

RotationSet RotationSet::make(std::size_t n) {
    if (n == 0) throw InvalidArgument("rotation count must be positive");
    RotationSet set{n, {}};
    for (std::size_t i = 0; i < n; ++i) set.angles.push_back(static_cast<double>(i) * std::numbers::pi / static_cast<double>(n));
    return set;
}

std::pair<std::size_t, std::size_t> grid_shape(const BinGeometry& bin, double resolution) {
    // The small slack keeps e.g. 0.3 / 0.002 from rounding up to 151.
    const auto cells = [&](double extent) {
        return static_cast<std::size_t>(std::ceil(extent / resolution - 1e-9));
    };
    return {cells(bin.y_extent), cells(bin.x_extent)};
}

BuildResult build_heightmap(const std::vector<rgbd::PointCloud>& clouds, const BinGeometry& bin, double resolution) {
    bin.validate();
    if (!(resolution > 0.0)) throw InvalidArgument("resolution must be positive");
    const auto [rows, cols] = grid_shape(bin, resolution);

    BuildResult result;
    Heightmap& hm = result.map;
    hm.resolution = resolution;
    hm.bin = bin;
    hm.height = Grid<float>(rows, cols, 0.0f);
    hm.color = ColorImage(rows, cols, Rgb{0, 0, 0});
    hm.known = Mask(rows, cols, 0);

    std::size_t total = 0;
    for (const auto& cloud : clouds) {
        total += cloud.size();
        for (std::size_t i = 0; i < cloud.size(); ++i) {
            const Eigen::Vector3d rel = cloud.points[i] - bin.origin;
            const long col = std::lround(rel.x() / resolution);
            const long row = std::lround(rel.y() / resolution);
            if (!hm.height.in_bounds(row, col)) continue;
            const float h = static_cast<float>(std::max(0.0, rel.z()));
            const Rgb color = i < cloud.colors.size() ? cloud.colors[i] : Rgb{0, 0, 0};
            auto& cell = hm.height(row, col);
            auto& known = hm.known(row, col);
            if (!known || h > cell || (h == cell && color < hm.color(row, col))) {
                cell = h;
                hm.color(row, col) = color;
                known = 1;
            }
        }
    }
    result.empty_input = total == 0;
    return result;
}

Heightmap fill_missing_heights(const Heightmap& hm, const Mask& foreground, double synthetic_height) {
    if (!foreground.same_shape(hm.height)) throw InvalidArgument("foreground mask shape mismatch");
    Heightmap out = hm;
    for (std::size_t i = 0; i < out.height.size(); ++i)
        if (!out.known.data()[i] && foreground.data()[i]) out.height.data()[i] = static_cast<float>(synthetic_height);
    return out;
}

Mask heightmap_foreground(const Heightmap& scene, const Heightmap& empty, double height_tol, double color_tol) {
    if (!scene.height.same_shape(empty.height)) throw InvalidArgument("heightmap shapes differ");
    Mask fg(scene.rows(), scene.cols(), 0);
    const double ct2 = color_tol * color_tol;
    for (std::size_t i = 0; i < fg.size(); ++i) {
        const bool sk = scene.known.data()[i] != 0;
        const bool ek = empty.known.data()[i] != 0;
        if (!sk) {
            fg.data()[i] = ek ? 1 : 0;
            continue;
        }
        const double eh = ek ? empty.height.data()[i] : 0.0;
        double c2 = 0.0;
        for (int ch = 0; ch < 3; ++ch) {
            const double d = (scene.color.data()[i][ch] - empty.color.data()[i][ch]) / 255.0;
            c2 += d * d;
        }
        fg.data()[i] = (std::abs(scene.height.data()[i] - eh) > height_tol || (ek && c2 > ct2)) ? 1 : 0;
    }
    return fg;
}

Mask missing_depth_columns(const Heightmap& hm, std::span<const rgbd::RgbdFrame> frames) {
    Mask out(hm.rows(), hm.cols(), 0);
    for (std::size_t r = 0; r < hm.rows(); ++r)
        for (std::size_t c = 0; c < hm.cols(); ++c) {
            if (hm.known(r, c)) continue;
            const Eigen::Vector3d floor = hm.bin.origin + Eigen::Vector3d(static_cast<double>(c) * hm.resolution,
                                                                          static_cast<double>(r) * hm.resolution, 0.0);
            for (const auto& f : frames) {
                const Eigen::Vector3d uvz = rgbd::project_to_pixel(floor, f.intrinsics, f.pose);
                if (uvz.z() <= 0.0) continue;
                const long u = std::lround(uvz.x()), v = std::lround(uvz.y());
                if (!f.depth.in_bounds(v, u)) continue;
                if (f.depth(v, u) <= 0.0f) {
                    out(r, c) = 1;
                    break;
                }
            }
        }
    return out;
}

namespace {

// Number of quarter turns if angle is a multiple of pi/2, else -1.
int quarter_turns(double angle) {
    const double q = angle / (std::numbers::pi / 2.0);
    const double rq = std::round(q);
    if (std::abs(q - rq) > 1e-12) return -1;
    return static_cast<int>(((static_cast<long>(rq) % 4) + 4) % 4);
}

template <typename T>
Grid<T> rotate_quarter(const Grid<T>& in, int turns, std::size_t out_rows, std::size_t out_cols, T pad) {
    const long h = static_cast<long>(in.rows());
    const long w = static_cast<long>(in.cols());
    const std::size_t nat_rows = (turns % 2 == 0) ? in.rows() : in.cols();
    const std::size_t nat_cols = (turns % 2 == 0) ? in.cols() : in.rows();
    // Integer centering offset; exact when the parity of both canvases agrees.
    const long off_r = (static_cast<long>(out_rows) - static_cast<long>(nat_rows)) / 2;
    const long off_c = (static_cast<long>(out_cols) - static_cast<long>(nat_cols)) / 2;
    Grid<T> out(out_rows, out_cols, pad);
    for (long r = 0; r < h; ++r) {
        for (long c = 0; c < w; ++c) {
            long nr = r, nc = c;
            switch (turns) {
                case 1: nr = c; nc = h - 1 - r; break;
                case 2: nr = h - 1 - r; nc = w - 1 - c; break;
                case 3: nr = w - 1 - c; nc = r; break;
                default: break;
            }
            nr += off_r;
            nc += off_c;
            if (out.in_bounds(nr, nc)) out(nr, nc) = in(r, c);
        }
    }
    return out;
}

struct Canvas {
    std::size_t rows;
    std::size_t cols;
};

Canvas rotated_canvas(std::size_t rows, std::size_t cols, double angle, std::optional<std::size_t> out_rows,
                      std::optional<std::size_t> out_cols) {
    const double ca = std::abs(std::cos(angle)), sa = std::abs(std::sin(angle));
    const double w = static_cast<double>(cols), h = static_cast<double>(rows);
    Canvas c{static_cast<std::size_t>(std::ceil(h * ca + w * sa - 1e-9)),
             static_cast<std::size_t>(std::ceil(w * ca + h * sa - 1e-9))};
    if (out_rows) c.rows = *out_rows;
    if (out_cols) c.cols = *out_cols;
    return c;
}

// Calls fn(out_r, out_c, src_x, src_y) with the source position of every output pixel.
template <typename Fn>
void for_each_source(std::size_t in_rows, std::size_t in_cols, const Canvas& canvas, double angle, Fn&& fn) {
    const double cx = (static_cast<double>(in_cols) - 1.0) / 2.0, cy = (static_cast<double>(in_rows) - 1.0) / 2.0;
    const double ocx = (static_cast<double>(canvas.cols) - 1.0) / 2.0, ocy = (static_cast<double>(canvas.rows) - 1.0) / 2.0;
    const double c = std::cos(angle), s = std::sin(angle);
    for (std::size_t r = 0; r < canvas.rows; ++r) {
        for (std::size_t col = 0; col < canvas.cols; ++col) {
            const double x = static_cast<double>(col) - ocx, y = static_cast<double>(r) - ocy;
            // Inverse rotation maps the output pixel back into the source.
            fn(r, col, c * x + s * y + cx, -s * x + c * y + cy);
        }
    }
}

struct Bilinear {
    long r0, c0;
    double fr, fc;
};

Bilinear bilinear_at(double x, double y) {
    const double fx = std::floor(x), fy = std::floor(y);
    return {static_cast<long>(fy), static_cast<long>(fx), y - fy, x - fx};
}

template <typename Get>
double blend(const Bilinear& b, Get&& get) {
    return (1 - b.fr) * ((1 - b.fc) * get(b.r0, b.c0) + b.fc * get(b.r0, b.c0 + 1)) +
           b.fr * ((1 - b.fc) * get(b.r0 + 1, b.c0) + b.fc * get(b.r0 + 1, b.c0 + 1));
}

}  // namespace

Grid<float> rotate_grid(const Grid<float>& grid, double angle, std::optional<std::size_t> out_rows,
                        std::optional<std::size_t> out_cols) {
    const int turns = quarter_turns(angle);
    if (turns >= 0) {
        const std::size_t nr = (turns % 2 == 0) ? grid.rows() : grid.cols();
        const std::size_t nc = (turns % 2 == 0) ? grid.cols() : grid.rows();
        return rotate_quarter(grid, turns, out_rows.value_or(nr), out_cols.value_or(nc), 0.0f);
    }
    const Canvas canvas = rotated_canvas(grid.rows(), grid.cols(), angle, out_rows, out_cols);
    Grid<float> out(canvas.rows, canvas.cols, 0.0f);
    const auto get = [&](long r, long c) -> double { return grid.in_bounds(r, c) ? grid(r, c) : 0.0; };
    for_each_source(grid.rows(), grid.cols(), canvas, angle, [&](std::size_t r, std::size_t c, double x, double y) {
        out(r, c) = static_cast<float>(blend(bilinear_at(x, y), get));
    });
    return out;
}

Heightmap rotate_heightmap(const Heightmap& hm, double angle, std::optional<std::size_t> out_rows,
                           std::optional<std::size_t> out_cols) {
    if (angle == 0.0 && !out_rows && !out_cols) return hm;
    Heightmap out;
    out.resolution = hm.resolution;
    out.bin = hm.bin;
    const int turns = quarter_turns(angle);
    if (turns >= 0) {
        const std::size_t nr = (turns % 2 == 0) ? hm.rows() : hm.cols();
        const std::size_t nc = (turns % 2 == 0) ? hm.cols() : hm.rows();
        const std::size_t orows = out_rows.value_or(nr), ocols = out_cols.value_or(nc);
        out.height = rotate_quarter(hm.height, turns, orows, ocols, 0.0f);
        out.color = rotate_quarter(hm.color, turns, orows, ocols, Rgb{0, 0, 0});
        out.known = rotate_quarter(hm.known, turns, orows, ocols, std::uint8_t{0});
        return out;
    }

    const Canvas canvas = rotated_canvas(hm.rows(), hm.cols(), angle, out_rows, out_cols);
    out.height = Grid<float>(canvas.rows, canvas.cols, 0.0f);
    out.color = ColorImage(canvas.rows, canvas.cols, Rgb{0, 0, 0});
    out.known = Mask(canvas.rows, canvas.cols, 0);
    for_each_source(hm.rows(), hm.cols(), canvas, angle, [&](std::size_t r, std::size_t c, double x, double y) {
        const Bilinear b = bilinear_at(x, y);
        out.height(r, c) = static_cast<float>(
            blend(b, [&](long rr, long cc) -> double { return hm.height.in_bounds(rr, cc) ? hm.height(rr, cc) : 0.0; }));
        for (int ch = 0; ch < 3; ++ch) {
            const double v = blend(b, [&](long rr, long cc) -> double {
                return hm.color.in_bounds(rr, cc) ? hm.color(rr, cc)[ch] : 0.0;
            });
            out.color(r, c)[ch] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
        }
        const long nr = std::lround(y), nc = std::lround(x);
        out.known(r, c) = hm.known.in_bounds(nr, nc) ? hm.known(nr, nc) : 0;
    });
    return out;
}

Eigen::Vector3d pixel_to_world(const Heightmap& hm, long row, long col) {
    if (!hm.height.in_bounds(row, col)) throw InvalidArgument("pixel_to_world: index out of bounds");
    return hm.bin.origin + Eigen::Vector3d(static_cast<double>(col) * hm.resolution,
                                           static_cast<double>(row) * hm.resolution, hm.height(row, col));
}

std::optional<PixelIndex> world_to_pixel(const Heightmap& hm, const Eigen::Vector3d& p) {
    const Eigen::Vector3d rel = p - hm.bin.origin;
    const long col = std::lround(rel.x() / hm.resolution);
    const long row = std::lround(rel.y() / hm.resolution);
    if (!hm.height.in_bounds(row, col)) return std::nullopt;
    return PixelIndex{row, col};
}

}  // namespace arcpick::heightmap
