#include "arcpick/affordance.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "arcpick/io.hpp"
#include "arcpick/kdtree.hpp"

namespace arcpick::affordance {

std::string_view to_string(PrimitiveKind kind) {
    switch (kind) {
        case PrimitiveKind::suction_down: return "sd";
        case PrimitiveKind::suction_side: return "ss";
        case PrimitiveKind::grasp_down: return "gd";
        case PrimitiveKind::flush_grasp: return "fg";
    }
    return "?";
}

PrimitiveKind parse_primitive(std::string_view code) {
    if (code == "sd") return PrimitiveKind::suction_down;
    if (code == "ss") return PrimitiveKind::suction_side;
    if (code == "gd") return PrimitiveKind::grasp_down;
    if (code == "fg") return PrimitiveKind::flush_grasp;
    throw InvalidArgument("unknown primitive '" + std::string(code) + "'");
}

void AffordanceMap::validate() const {
    for (float v : values.data())
        if (!(v >= 0.0f && v <= 1.0f)) throw InvalidArgument("affordance value outside [0, 1]");
    if ((kind == MapKind::grasp) != angle.has_value())
        throw InvalidArgument("grasp maps need an angle and suction maps must not have one");
}

std::vector<double> suction_baseline(const rgbd::PointCloud& cloud, const SuctionBaselineParams& params) {
    std::vector<double> out(cloud.size(), 0.0);
    if (cloud.empty()) return out;
    if (!cloud.has_normals()) throw InvalidArgument("suction_baseline: cloud has no normals");

    const KdTree3 tree(cloud.points);
    std::vector<std::size_t> nbrs;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        if (!cloud.normal_valid[i]) continue;
        tree.radius_search(cloud.points[i], params.window_radius, nbrs);
        Eigen::Vector3d mean = Eigen::Vector3d::Zero();
        std::size_t count = 0;
        for (std::size_t j : nbrs) {
            if (!cloud.normal_valid[j]) continue;
            mean += cloud.normals[j];
            ++count;
        }
        if (count < params.min_support) continue;
        mean /= static_cast<double>(count);
        const double variance = std::max(0.0, 1.0 - mean.squaredNorm());
        out[i] = std::exp(-params.beta * variance);
    }
    return out;
}

ProfileSampler::ProfileSampler(const heightmap::RotationSet& rotations, const GripperParams& gripper, double resolution)
    : gripper_(gripper), resolution_(resolution) {
    if (!(resolution > 0.0)) throw InvalidArgument("resolution must be positive");
    if (!(gripper.max_opening > 0.0) || !(gripper.finger_width > 0.0) || !(gripper.finger_clearance > 0.0) ||
        !(gripper.finger_span >= 0.0))
        throw InvalidArgument("gripper parameters must be positive");
    slot_px_ = std::max(1L, static_cast<long>(std::ceil(gripper.finger_width / resolution - 1e-9)));
    reach_ = static_cast<long>(std::ceil(gripper.max_opening / resolution - 1e-9)) + slot_px_;
    band_ = static_cast<long>(std::ceil(gripper.finger_span / 2.0 / resolution - 1e-9));

    const std::size_t n = rotations.angles.size();
    offsets_.assign(n, {});
    const bool quarter_symmetric = n % 2 == 0;
    for (std::size_t i = 0; i < n; ++i) {
        auto& table = offsets_[i];
        if (quarter_symmetric && i >= n / 2) {
            // Exact quarter turn of angle i - n/2: (dr, dc) -> (dc, -dr).
            for (const auto& o : offsets_[i - n / 2]) table.push_back(PixelIndex{o.col, -o.row});
            continue;
        }
        const double c = std::cos(rotations.angles[i]), s = std::sin(rotations.angles[i]);
        table.reserve(static_cast<std::size_t>((2 * reach_ + 1) * (2 * band_ + 1)));
        for (long k = -reach_; k <= reach_; ++k)
            for (long m = -band_; m <= band_; ++m) {
                // Axis direction (s, c) in (row, col); across it (c, -s).
                const double dr = static_cast<double>(k) * s + static_cast<double>(m) * c;
                const double dc = static_cast<double>(k) * c - static_cast<double>(m) * s;
                table.push_back(PixelIndex{std::lround(dr), std::lround(dc)});
            }
    }
}

ProfileMeasurement ProfileSampler::measure(const Grid<float>& height, long row, long col, std::size_t angle_index) const {
    const double top = height(row, col);
    const double threshold = top - gripper_.finger_clearance;
    if (threshold < 0.0) return {};

    const auto sample = [&](long k, long m) -> double {
        const auto& o = offset(angle_index, k, m);
        const long r = row + o.row, c = col + o.col;
        return height.in_bounds(r, c) ? static_cast<double>(height(r, c)) : 0.0;
    };

    long extent[2] = {0, 0};
    double margin[2] = {0.0, 0.0};
    for (int s = 0; s < 2; ++s) {
        const long side = s == 0 ? -1 : 1;
        long k = 1;
        while (k <= reach_ && sample(side * k, 0) > threshold) ++k;
        extent[s] = k - 1;
        if (extent[s] + slot_px_ > reach_) return {};
        double slot_max = 0.0;
        for (long j = extent[s] + 1; j <= extent[s] + slot_px_; ++j)
            for (long m = -band_; m <= band_; ++m) {
                const double h = sample(side * j, m);
                if (h > threshold) return {};
                slot_max = std::max(slot_max, h);
            }
        margin[s] = top - slot_max;
    }

    ProfileMeasurement m;
    const long span = extent[0] + extent[1] + 1;
    m.object_width = static_cast<double>(span) * resolution_;
    if (m.object_width > gripper_.max_opening + 1e-12) return {};
    m.hill = true;
    const double depth = std::min(1.0, std::min(margin[0], margin[1]) / (2.0 * gripper_.finger_clearance));
    const double centering = 1.0 - static_cast<double>(std::abs(extent[0] - extent[1])) / static_cast<double>(span);
    const double snug = 1.0 - 0.5 * m.object_width / gripper_.max_opening;

    // Contact faces should be parallel: run extents on lines offset across
    // the axis (half the finger span) should match the center line.
    double parallel = 1.0;
    const long half = band_ / 2;
    if (half > 0) {
        for (const long m_off : {-half, half}) {
            if (!(sample(0, m_off) > threshold)) return m;
            long deviation = 0;
            for (int s = 0; s < 2; ++s) {
                const long side = s == 0 ? -1 : 1;
                long k = 1;
                while (k <= reach_ && sample(side * k, m_off) > threshold) ++k;
                deviation += std::abs(k - 1 - extent[s]);
            }
            parallel *= 1.0 - std::min(1.0, static_cast<double>(deviation) / static_cast<double>(span));
        }
    }
    m.score = depth * centering * snug * parallel;
    return m;
}

std::vector<AffordanceMap> grasp_baseline(const heightmap::Heightmap& hm, const heightmap::RotationSet& rotations,
                                          const GripperParams& gripper) {
    const ProfileSampler sampler(rotations, gripper, hm.resolution);
    std::vector<AffordanceMap> maps;
    maps.reserve(rotations.angles.size());
    for (std::size_t i = 0; i < rotations.angles.size(); ++i) {
        AffordanceMap map;
        map.kind = MapKind::grasp;
        map.angle = rotations.angles[i];
        map.source = MapSource::baseline;
        map.values = Grid<float>(hm.rows(), hm.cols(), 0.0f);
        for (long r = 0; r < static_cast<long>(hm.rows()); ++r)
            for (long c = 0; c < static_cast<long>(hm.cols()); ++c)
                map.values(r, c) = static_cast<float>(sampler.measure(hm.height, r, c, i).score);
        maps.push_back(std::move(map));
    }
    return maps;
}

void save_affordance_map(const std::filesystem::path& path, const AffordanceMap& map) {
    io::BinaryWriter w;
    w.bytes("AFFD", 4);
    w.u32(1);
    w.u32(static_cast<std::uint32_t>(map.values.rows()));
    w.u32(static_cast<std::uint32_t>(map.values.cols()));
    w.u32(static_cast<std::uint32_t>(map.kind));
    w.f32(map.angle ? static_cast<float>(*map.angle) : std::numeric_limits<float>::quiet_NaN());
    for (float v : map.values.data()) w.f32(v);
    w.save(path);
}

AffordanceMap load_learned_map(const std::filesystem::path& path, std::optional<std::size_t> expected_rows,
                               std::optional<std::size_t> expected_cols) {
    auto r = io::BinaryReader::open(path);
    if (r.magic() != "AFFD") throw FormatError(path.string() + ": not an affordance map");
    if (const auto version = r.u32(); version != 1) throw FormatError(path.string() + ": unsupported version");
    const std::size_t rows = r.u32(), cols = r.u32();
    const std::uint32_t kind = r.u32();
    const float angle = r.f32();
    if (kind > 1) throw FormatError(path.string() + ": unknown map kind");
    if ((expected_rows && *expected_rows != rows) || (expected_cols && *expected_cols != cols))
        throw FormatError(path.string() + ": dimension mismatch");

    AffordanceMap map;
    map.kind = static_cast<MapKind>(kind);
    map.source = MapSource::learned_file;
    if (map.kind == MapKind::grasp) {
        if (!std::isfinite(angle)) throw FormatError(path.string() + ": grasp map without angle");
        map.angle = angle;
    }
    map.values = Grid<float>(rows, cols);
    for (auto& v : map.values.data()) {
        v = r.f32();
        if (!std::isfinite(v)) throw FormatError(path.string() + ": non-finite affordance value");
        v = std::clamp(v, 0.0f, 1.0f);
    }
    if (!r.at_end()) throw FormatError(path.string() + ": trailing bytes");
    return map;
}

std::vector<SuctionProposal> make_suction_proposals(const rgbd::PointCloud& cloud, std::span<const double> affordances,
                                                    std::span<const Mask> foreground_masks,
                                                    const SuctionProposalParams& params) {
    if (affordances.size() != cloud.size()) throw InvalidArgument("affordances not aligned with cloud");
    std::vector<SuctionProposal> out;
    if (!cloud.has_normals()) return out;
    const double cos_threshold = std::cos(params.down_angle_threshold);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        if (!cloud.normal_valid[i]) continue;
        const rgbd::SourcePixel px = i < cloud.source_pixels.size() ? cloud.source_pixels[i] : rgbd::SourcePixel{};
        if (!foreground_masks.empty()) {
            if (px.frame >= foreground_masks.size()) continue;
            const Mask& m = foreground_masks[px.frame];
            if (!m.in_bounds(px.row, px.col) || !m(px.row, px.col)) continue;
        }
        SuctionProposal p;
        p.point = cloud.points[i];
        p.normal = cloud.normals[i];
        p.affordance = std::clamp(affordances[i], 0.0, 1.0);
        p.primitive = p.normal.z() >= cos_threshold ? PrimitiveKind::suction_down : PrimitiveKind::suction_side;
        p.point_index = i;
        p.pixel = px;
        out.push_back(p);
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const SuctionProposal& a, const SuctionProposal& b) { return a.affordance > b.affordance; });
    return out;
}

double wall_distance(const heightmap::BinGeometry& bin, const Eigen::Vector3d& p) {
    const Eigen::Vector3d rel = p - bin.origin;
    return std::min({rel.x(), bin.x_extent - rel.x(), rel.y(), bin.y_extent - rel.y()});
}

std::vector<GraspProposal> make_grasp_proposals(const heightmap::Heightmap& hm, std::span<const AffordanceMap> maps,
                                                const heightmap::BinGeometry& bin, const Mask& foreground,
                                                const GraspProposalParams& params) {
    if (maps.empty()) return {};
    const std::size_t n = maps.size();
    heightmap::RotationSet rotations = heightmap::RotationSet::make(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (maps[i].kind != MapKind::grasp || !maps[i].angle) throw InvalidArgument("make_grasp_proposals: not a grasp map");
        if (std::abs(*maps[i].angle - rotations.angles[i]) > 1e-5)
            throw InvalidArgument("make_grasp_proposals: maps must follow the rotation set order");
        if (!maps[i].values.same_shape(hm.height)) throw InvalidArgument("make_grasp_proposals: map shape mismatch");
    }
    const bool filter = !foreground.empty();
    if (filter && !foreground.same_shape(hm.height)) throw InvalidArgument("make_grasp_proposals: mask shape mismatch");

    const ProfileSampler sampler(rotations, params.gripper, hm.resolution);
    std::vector<GraspProposal> out;
    for (long r = 0; r < static_cast<long>(hm.rows()); ++r) {
        for (long c = 0; c < static_cast<long>(hm.cols()); ++c) {
            if (filter && !foreground(r, c)) continue;
            for (std::size_t i = 0; i < n; ++i) {
                const double a = maps[i].values(r, c);
                if (!(a > params.min_affordance)) continue;
                GraspProposal g;
                g.midpoint = heightmap::pixel_to_world(hm, r, c);
                g.angle = rotations.angles[i];
                g.angle_index = i;
                g.affordance = std::clamp(a, 0.0, 1.0);
                g.pixel = PixelIndex{r, c};
                const auto m = sampler.measure(hm.height, r, c, i);
                g.width = m.hill ? std::min(m.object_width + params.gripper.width_clearance, params.gripper.max_opening)
                                 : params.gripper.max_opening;
                g.primitive = wall_distance(bin, g.midpoint) <= bin.wall_margin ? PrimitiveKind::flush_grasp
                                                                                 : PrimitiveKind::grasp_down;
                out.push_back(g);
            }
        }
    }
    // Generation order is (pixel, angle), so a stable sort gives the tie-break.
    std::stable_sort(out.begin(), out.end(),
                     [](const GraspProposal& a, const GraspProposal& b) { return a.affordance > b.affordance; });
    return out;
}

namespace {

// Points outside the bin volume cannot become proposals; dropping them keeps
// neighborhood queries cheap. Source pixels and viewpoints are preserved.
rgbd::PointCloud crop_to_bin(const rgbd::PointCloud& cloud, const heightmap::BinGeometry& bin, double margin) {
    rgbd::PointCloud out;
    out.viewpoints = cloud.viewpoints;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Eigen::Vector3d rel = cloud.points[i] - bin.origin;
        if (rel.x() < -margin || rel.x() > bin.x_extent + margin || rel.y() < -margin || rel.y() > bin.y_extent + margin ||
            rel.z() < -margin)
            continue;
        out.push_back(cloud.points[i], cloud.colors[i], cloud.source_pixels[i]);
    }
    return out;
}

}  // namespace

namespace {

/// Cloud, foreground masks and filled heightmap shared by both pipelines.
BaselineResult prepare_scene(std::span<const rgbd::RgbdFrame> frames, std::span<const rgbd::RgbdFrame> empty_frames,
                             const heightmap::BinGeometry& bin, const BaselineOptions& options) {
    if (frames.empty()) throw InvalidArgument("affordance pipeline: no frames");
    if (frames.size() != empty_frames.size())
        throw InvalidArgument("affordance pipeline: need one empty-bin frame per view");
    bin.validate();

    BaselineResult out;
    std::vector<rgbd::PointCloud> clouds, empty_clouds;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        out.foreground.push_back(rgbd::background_subtract(frames[i], empty_frames[i], options.background));
        clouds.push_back(rgbd::project_to_cloud(frames[i]));
        empty_clouds.push_back(rgbd::project_to_cloud(empty_frames[i]));
    }
    out.cloud = crop_to_bin(rgbd::merge(clouds), bin, options.normals.radius);
    if (!out.cloud.empty()) out.cloud = rgbd::estimate_normals(out.cloud, options.normals);

    const auto scene_hm = heightmap::build_heightmap(clouds, bin, options.resolution).map;
    const auto empty_hm = heightmap::build_heightmap(empty_clouds, bin, options.resolution).map;
    out.heightmap_foreground = heightmap::heightmap_foreground(scene_hm, empty_hm, options.background.depth,
                                                               options.background.color);
    // Unknown columns count as objects only when a camera saw missing depth there.
    const Mask depthless = heightmap::missing_depth_columns(scene_hm, frames);
    for (std::size_t i = 0; i < out.heightmap_foreground.size(); ++i)
        if (!scene_hm.known.data()[i] && !depthless.data()[i]) out.heightmap_foreground.data()[i] = 0;
    out.heightmap = heightmap::fill_missing_heights(scene_hm, out.heightmap_foreground);
    return out;
}

}  // namespace

BaselineResult run_baselines(std::span<const rgbd::RgbdFrame> frames, std::span<const rgbd::RgbdFrame> empty_frames,
                             const heightmap::BinGeometry& bin, const BaselineOptions& options) {
    BaselineResult out = prepare_scene(frames, empty_frames, bin, options);
    out.suction = suction_baseline(out.cloud, options.suction);
    out.suction_proposals = make_suction_proposals(out.cloud, out.suction, out.foreground, options.suction_proposals);
    const auto rotations = heightmap::RotationSet::make(options.rotations);
    out.grasp_maps = grasp_baseline(out.heightmap, rotations, options.grasp.gripper);
    out.grasp_proposals = make_grasp_proposals(out.heightmap, out.grasp_maps, bin, out.heightmap_foreground, options.grasp);
    return out;
}

BaselineResult run_learned(std::span<const rgbd::RgbdFrame> frames, std::span<const rgbd::RgbdFrame> empty_frames,
                           const heightmap::BinGeometry& bin, const LearnedMaps& maps, const BaselineOptions& options) {
    if (maps.suction.size() != frames.size()) throw InvalidArgument("run_learned: need one suction map per view");
    if (maps.grasp.size() != options.rotations)
        throw InvalidArgument("run_learned: need one grasp map per rotation angle");
    for (std::size_t i = 0; i < frames.size(); ++i) {
        maps.suction[i].validate();
        if (maps.suction[i].kind != MapKind::suction || !maps.suction[i].values.same_shape(frames[i].depth))
            throw InvalidArgument("run_learned: suction map " + std::to_string(i) + " does not match its frame");
    }
    BaselineResult out = prepare_scene(frames, empty_frames, bin, options);
    for (const auto& m : maps.grasp) {
        m.validate();
        if (m.kind != MapKind::grasp || !m.values.same_shape(out.heightmap.height))
            throw InvalidArgument("run_learned: grasp map does not match the heightmap");
    }
    out.suction.resize(out.cloud.size());
    for (std::size_t i = 0; i < out.cloud.size(); ++i) {
        const auto& px = out.cloud.source_pixels[i];
        out.suction[i] = maps.suction[px.frame].values(static_cast<std::size_t>(px.row), static_cast<std::size_t>(px.col));
    }
    out.suction_proposals = make_suction_proposals(out.cloud, out.suction, out.foreground, options.suction_proposals);
    out.grasp_maps = maps.grasp;
    out.grasp_proposals = make_grasp_proposals(out.heightmap, out.grasp_maps, bin, out.heightmap_foreground, options.grasp);
    return out;
}

}  // namespace arcpick::affordance
