#include "arcpick/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <memory>
#include <numeric>

#include "arcpick/io.hpp"

namespace arcpick::evaluation {

namespace {

double fraction_of(Slice s) {
    switch (s) {
        case Slice::top1: return 0.0;
        case Slice::top1_percent: return 0.01;
        case Slice::top5_percent: return 0.05;
        case Slice::top10_percent: return 0.10;
    }
    return 0.0;
}

nlohmann::json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("missing " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void write_json_file(const fs::path& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

std::vector<rgbd::RgbdFrame> read_frames(const fs::path& dir) {
    std::vector<rgbd::RgbdFrame> frames;
    for (const auto& stem : io::list_frames(dir)) frames.push_back(io::read_frame(dir, stem));
    return frames;
}

std::string stem_of(std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%03zu", i);
    return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Labels

void validate_suction_mask(const SuctionLabelMask& mask) {
    for (const auto v : mask.data())
        if (v != 0 && v != 128 && v != 255)
            throw FormatError("suction mask value " + std::to_string(v) + " is not 0, 128 or 255");
}

void write_suction_mask(const fs::path& path, const SuctionLabelMask& mask) {
    validate_suction_mask(mask);
    io::write_png_gray8(path, mask);
}

SuctionLabelMask read_suction_mask(const fs::path& path) {
    SuctionLabelMask mask = io::read_png_gray8(path);
    try {
        validate_suction_mask(mask);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    return mask;
}

nlohmann::json grasp_labels_to_json(std::span<const GraspLabel> labels) {
    auto j = nlohmann::json::array();
    for (const auto& l : labels)
        j.push_back({{"row", l.row},
                     {"col", l.col},
                     {"angle_rad", l.angle},
                     {"polarity", l.polarity == Polarity::positive ? "positive" : "negative"}});
    return j;
}

std::vector<GraspLabel> grasp_labels_from_json(const nlohmann::json& j, std::size_t rows, std::size_t cols) {
    if (!j.is_array()) throw FormatError("grasp labels: expected a JSON array");
    std::vector<GraspLabel> out;
    for (const auto& e : j) {
        GraspLabel l;
        try {
            l.row = e.at("row").get<long>();
            l.col = e.at("col").get<long>();
            l.angle = e.at("angle_rad").get<double>();
            const auto pol = e.at("polarity").get<std::string>();
            if (pol == "positive")
                l.polarity = Polarity::positive;
            else if (pol == "negative")
                l.polarity = Polarity::negative;
            else
                throw FormatError("grasp labels: bad polarity '" + pol + "'");
        } catch (const nlohmann::json::exception& ex) {
            throw FormatError(std::string("grasp labels: ") + ex.what());
        }
        if (!(l.angle >= 0.0 && l.angle < std::numbers::pi)) throw FormatError("grasp labels: angle outside [0, pi)");
        if (l.row < 0 || l.col < 0 ||
            (rows > 0 && (static_cast<std::size_t>(l.row) >= rows || static_cast<std::size_t>(l.col) >= cols)))
            throw FormatError("grasp labels: pixel out of bounds");
        out.push_back(l);
    }
    return out;
}

void write_grasp_labels(const fs::path& path, std::span<const GraspLabel> labels) {
    write_json_file(path, grasp_labels_to_json(labels));
}

std::vector<GraspLabel> read_grasp_labels(const fs::path& path, std::size_t rows, std::size_t cols) {
    try {
        return grasp_labels_from_json(read_json_file(path), rows, cols);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

std::vector<GraspLabel> jitter_augment(const GraspLabel& label, double max_jitter, double resolution, std::size_t count,
                                       std::size_t rows, std::size_t cols, Rng& rng) {
    if (!(resolution > 0.0)) throw InvalidArgument("jitter_augment: resolution must be positive");
    if (!(max_jitter >= 0.0)) throw InvalidArgument("jitter_augment: max_jitter must be >= 0");
    if (rows == 0 || cols == 0) throw InvalidArgument("jitter_augment: empty grid");
    const double radius = max_jitter / resolution;
    // Pixel offsets inside the disc, each equally likely.
    const long reach = static_cast<long>(std::floor(radius + 1e-9));
    std::vector<std::pair<long, long>> offsets;
    for (long dr = -reach; dr <= reach; ++dr)
        for (long dc = -reach; dc <= reach; ++dc)
            if (static_cast<double>(dr * dr + dc * dc) <= radius * radius + 1e-9) offsets.emplace_back(dr, dc);
    std::vector<GraspLabel> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const auto [dr, dc] = offsets[rng.index(offsets.size())];
        GraspLabel l = label;
        l.row = std::clamp<long>(label.row + dr, 0, static_cast<long>(rows) - 1);
        l.col = std::clamp<long>(label.col + dc, 0, static_cast<long>(cols) - 1);
        out.push_back(l);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Precision

std::string slice_name(Slice s) {
    switch (s) {
        case Slice::top1: return "top1";
        case Slice::top1_percent: return "top1%";
        case Slice::top5_percent: return "top5%";
        case Slice::top10_percent: return "top10%";
    }
    return "?";
}

std::size_t slice_size(Slice s, std::size_t n) {
    if (n == 0) return 0;
    if (s == Slice::top1) return 1;
    // Exact for the 1/5/10 percent fractions: p * n is rounded to 1e-9 first.
    const double x = fraction_of(s) * static_cast<double>(n);
    return std::min(n, static_cast<std::size_t>(std::ceil(x - 1e-9)));
}

std::optional<double> Precision::value() const {
    const std::size_t counted = true_positives + false_positives;
    if (counted == 0) return std::nullopt;
    return static_cast<double>(true_positives) / static_cast<double>(counted);
}

Precision& Precision::operator+=(const Precision& o) {
    true_positives += o.true_positives;
    false_positives += o.false_positives;
    excluded += o.excluded;
    return *this;
}

Precision suction_precision(std::span<const affordance::SuctionProposal> ranked,
                            std::span<const SuctionLabelMask> masks, Slice slice) {
    Precision p;
    const std::size_t n = slice_size(slice, ranked.size());
    for (std::size_t i = 0; i < n; ++i) {
        const auto& px = ranked[i].pixel;
        if (px.frame >= masks.size()) throw InvalidArgument("suction_precision: no mask for frame " + std::to_string(px.frame));
        const auto& mask = masks[px.frame];
        if (!mask.in_bounds(px.row, px.col)) throw InvalidArgument("suction_precision: proposal pixel outside its mask");
        switch (static_cast<SuctionLabel>(mask(static_cast<std::size_t>(px.row), static_cast<std::size_t>(px.col)))) {
            case SuctionLabel::positive: ++p.true_positives; break;
            case SuctionLabel::negative: ++p.false_positives; break;
            default: ++p.excluded; break;
        }
    }
    return p;
}

double grasp_angle_distance(double a, double b) {
    double d = std::fmod(std::abs(a - b), std::numbers::pi);
    return std::min(d, std::numbers::pi - d);
}

GraspVerdict judge_grasp(const PixelIndex& pixel, double angle, std::span<const GraspLabel> labels,
                         const GraspMatchRule& rule) {
    // Tolerances absorb rounding in degree-to-radian conversions at the boundary.
    constexpr double kSlack = 1e-9;
    bool negative = false;
    for (const auto& l : labels) {
        const double dr = static_cast<double>(l.row - pixel.row), dc = static_cast<double>(l.col - pixel.col);
        if (std::hypot(dr, dc) > rule.max_pixels + kSlack) continue;
        if (grasp_angle_distance(angle, l.angle) > rule.max_angle + kSlack) continue;
        if (l.polarity == Polarity::positive) return GraspVerdict::true_positive;
        negative = true;
    }
    return negative ? GraspVerdict::false_positive : GraspVerdict::excluded;
}

Precision grasp_precision(std::span<const affordance::GraspProposal> ranked, std::span<const GraspLabel> labels,
                          Slice slice, const GraspMatchRule& rule) {
    Precision p;
    const std::size_t n = slice_size(slice, ranked.size());
    for (std::size_t i = 0; i < n; ++i) {
        switch (judge_grasp(ranked[i].pixel, ranked[i].angle, labels, rule)) {
            case GraspVerdict::true_positive: ++p.true_positives; break;
            case GraspVerdict::false_positive: ++p.false_positives; break;
            case GraspVerdict::excluded: ++p.excluded; break;
        }
    }
    return p;
}

PrecisionTable& PrecisionTable::operator+=(const PrecisionTable& o) {
    for (std::size_t i = 0; i < kSlices.size(); ++i) {
        suction[i] += o.suction[i];
        grasp[i] += o.grasp[i];
    }
    return *this;
}

nlohmann::json PrecisionTable::to_json() const {
    nlohmann::json j;
    for (const auto& [name, row] : {std::pair{"suction", &suction}, std::pair{"grasp", &grasp}}) {
        nlohmann::json values, counts;
        for (std::size_t i = 0; i < kSlices.size(); ++i) {
            const auto key = slice_name(kSlices[i]);
            const auto v = (*row)[i].value();
            values[key] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
            counts[key] = {{"tp", (*row)[i].true_positives},
                           {"fp", (*row)[i].false_positives},
                           {"excluded", (*row)[i].excluded}};
        }
        j[name] = values;
        j["counts"][name] = counts;
    }
    return j;
}

// ---------------------------------------------------------------------------
// Scenes and datasets

nlohmann::json bin_to_json(const heightmap::BinGeometry& bin) {
    return {{"origin", {bin.origin.x(), bin.origin.y(), bin.origin.z()}},
            {"x_extent", bin.x_extent},
            {"y_extent", bin.y_extent},
            {"wall_margin", bin.wall_margin}};
}

heightmap::BinGeometry bin_from_json(const nlohmann::json& j) {
    heightmap::BinGeometry bin;
    try {
        const auto o = j.at("origin").get<std::vector<double>>();
        if (o.size() != 3) throw FormatError("bin: origin needs 3 values");
        bin.origin = Eigen::Vector3d(o[0], o[1], o[2]);
        bin.x_extent = j.at("x_extent").get<double>();
        bin.y_extent = j.at("y_extent").get<double>();
        bin.wall_margin = j.value("wall_margin", 0.0);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bin: ") + e.what());
    }
    try {
        bin.validate();
    } catch (const Error& e) {
        throw FormatError(std::string("bin: ") + e.what());
    }
    return bin;
}

void write_scene_dir(const fs::path& dir, const SceneInput& scene) {
    fs::create_directories(dir / "empty");
    write_json_file(dir / "bin.json", bin_to_json(scene.bin));
    for (std::size_t i = 0; i < scene.frames.size(); ++i) io::write_frame(dir, stem_of(i), scene.frames[i]);
    for (std::size_t i = 0; i < scene.empty_frames.size(); ++i)
        io::write_frame(dir / "empty", stem_of(i), scene.empty_frames[i]);
}

SceneInput read_scene_dir(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw InvalidArgument("scene directory not found: " + dir.string());
    SceneInput s;
    try {
        s.bin = bin_from_json(read_json_file(dir / "bin.json"));
    } catch (const FormatError& e) {
        throw FormatError((dir / "bin.json").string() + ": " + e.what());
    }
    s.frames = read_frames(dir);
    s.empty_frames = read_frames(dir / "empty");
    if (s.frames.empty()) throw FormatError(dir.string() + ": no frames");
    if (s.frames.size() != s.empty_frames.size())
        throw FormatError(dir.string() + ": empty/ must hold one frame per scene view");
    return s;
}

affordance::LearnedMaps read_learned_maps(const fs::path& dir, const SceneInput& scene,
                                          const affordance::BaselineOptions& options) {
    affordance::LearnedMaps maps;
    for (std::size_t i = 0; i < scene.frames.size(); ++i) {
        const auto& d = scene.frames[i].depth;
        maps.suction.push_back(
            affordance::load_learned_map(dir / (stem_of(i) + ".suction.affd"), d.rows(), d.cols()));
        if (maps.suction.back().kind != affordance::MapKind::suction)
            throw FormatError(dir.string() + ": view " + std::to_string(i) + " map is not a suction map");
    }
    const auto [rows, cols] = heightmap::grid_shape(scene.bin, options.resolution);
    for (std::size_t k = 0; k < options.rotations; ++k) {
        char name[32];
        std::snprintf(name, sizeof name, "grasp_%02zu.affd", k);
        maps.grasp.push_back(affordance::load_learned_map(dir / name, rows, cols));
        if (maps.grasp.back().kind != affordance::MapKind::grasp)
            throw FormatError((dir / name).string() + ": not a grasp map");
    }
    return maps;
}

std::uint64_t stable_hash(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::vector<bool> split_test(std::span<const std::string> names) {
    std::vector<std::size_t> order(names.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto ha = stable_hash(names[a]), hb = stable_hash(names[b]);
        return ha != hb ? ha < hb : names[a] < names[b];
    });
    const auto n_test = static_cast<std::size_t>(std::lround(static_cast<double>(names.size()) / 5.0));
    std::vector<bool> test(names.size(), false);
    for (std::size_t i = 0; i < n_test; ++i) test[order[i]] = true;
    return test;
}

std::vector<const LabeledScene*> LabelDataset::train() const {
    std::vector<const LabeledScene*> out;
    for (const auto& s : scenes)
        if (!s.test) out.push_back(&s);
    return out;
}

std::vector<const LabeledScene*> LabelDataset::test() const {
    std::vector<const LabeledScene*> out;
    for (const auto& s : scenes)
        if (s.test) out.push_back(&s);
    return out;
}

LabelDataset load_label_dataset(const fs::path& root, double resolution) {
    if (!fs::is_directory(root)) throw InvalidArgument("dataset directory not found: " + root.string());
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory()) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());

    LabelDataset ds;
    std::vector<std::string> names;
    for (const auto& dir : dirs) {
        LabeledScene item;
        item.name = dir.filename().string();
        item.dir = dir;
        item.scene = read_scene_dir(dir);
        for (std::size_t i = 0; i < item.scene.frames.size(); ++i) {
            auto mask = read_suction_mask(dir / (stem_of(i) + ".suction.png"));
            if (!mask.same_shape(item.scene.frames[i].depth))
                throw FormatError(dir.string() + ": suction mask " + std::to_string(i) + " does not match its frame");
            item.suction_masks.push_back(std::move(mask));
        }
        const auto [rows, cols] = heightmap::grid_shape(item.scene.bin, resolution);
        item.grasp_labels = read_grasp_labels(dir / "grasp_labels.json", rows, cols);
        names.push_back(item.name);
        ds.scenes.push_back(std::move(item));
    }
    const auto test = split_test(names);
    for (std::size_t i = 0; i < ds.scenes.size(); ++i) ds.scenes[i].test = test[i];
    return ds;
}

void write_labeled_scene(const fs::path& dir, const SceneInput& scene, std::span<const SuctionLabelMask> masks,
                         std::span<const GraspLabel> grasp_labels) {
    if (masks.size() != scene.frames.size()) throw InvalidArgument("write_labeled_scene: need one mask per view");
    write_scene_dir(dir, scene);
    for (std::size_t i = 0; i < masks.size(); ++i) write_suction_mask(dir / (stem_of(i) + ".suction.png"), masks[i]);
    write_grasp_labels(dir / "grasp_labels.json", grasp_labels);
}

SuctionLabelMask label_suction_view(const synthetic::Scene& scene, const rgbd::RgbdFrame& view, double edge_margin) {
    constexpr double kOnSurface = 1e-3;
    SuctionLabelMask mask(view.depth.rows(), view.depth.cols(), static_cast<std::uint8_t>(SuctionLabel::neither));
    const auto cloud = rgbd::project_to_cloud(view);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto& p = cloud.points[i];
        SuctionLabel label = SuctionLabel::neither;
        for (const auto& b : scene.boxes) {
            const Eigen::Vector3d local = b.rotation.transpose() * (p - b.center);
            const Eigen::Vector3d inset = b.half_extents - local.cwiseAbs();
            if (inset.minCoeff() < -kOnSurface) continue;
            // The face the point lies on is the axis with the smallest inset;
            // its distance to the face boundary is the smaller of the other two.
            Eigen::Index face = 0;
            inset.minCoeff(&face);
            double to_edge = std::numeric_limits<double>::infinity();
            for (Eigen::Index a = 0; a < 3; ++a)
                if (a != face) to_edge = std::min(to_edge, inset(a));
            label = to_edge >= edge_margin ? SuctionLabel::positive : SuctionLabel::negative;
            if (label == SuctionLabel::positive) break;
        }
        const auto& px = cloud.source_pixels[i];
        mask(static_cast<std::size_t>(px.row), static_cast<std::size_t>(px.col)) = static_cast<std::uint8_t>(label);
    }
    return mask;
}

std::vector<GraspLabel> label_grasps(const synthetic::Scene& scene, const heightmap::BinGeometry& bin,
                                     double resolution, double max_opening, std::size_t jitter, Rng& rng) {
    const auto [rows, cols] = heightmap::grid_shape(bin, resolution);
    const auto wrap = [](double a) {
        a = std::fmod(a, std::numbers::pi);
        if (a < 0.0) a += std::numbers::pi;
        return a >= std::numbers::pi ? 0.0 : a;
    };
    std::vector<GraspLabel> out;
    for (const auto& b : scene.boxes) {
        const Eigen::Vector3d ax = b.rotation.col(0);
        const double yaw = std::atan2(ax.y(), ax.x());
        const double sx = 2.0 * b.half_extents.x(), sy = 2.0 * b.half_extents.y();
        const double short_side = std::min(sx, sy), long_side = std::max(sx, sy);
        const double across_short = wrap(sx <= sy ? yaw : yaw + std::numbers::pi / 2.0);
        const long col = std::lround((b.center.x() - bin.origin.x()) / resolution);
        const long row = std::lround((b.center.y() - bin.origin.y()) / resolution);
        if (row < 0 || col < 0 || static_cast<std::size_t>(row) >= rows || static_cast<std::size_t>(col) >= cols)
            continue;
        const auto at = [&](double angle, Polarity p) { return GraspLabel{row, col, wrap(angle), p}; };
        std::vector<GraspLabel> base;
        base.push_back(at(across_short, short_side <= max_opening ? Polarity::positive : Polarity::negative));
        if (long_side > max_opening) base.push_back(at(across_short + std::numbers::pi / 2.0, Polarity::negative));
        // Closing across a corner squeezes two edges instead of two faces.
        base.push_back(at(across_short + std::numbers::pi / 4.0, Polarity::negative));
        base.push_back(at(across_short - std::numbers::pi / 4.0, Polarity::negative));
        for (const auto& l : base) {
            out.push_back(l);
            for (const auto& j : jitter_augment(l, 0.016, resolution, jitter, rows, cols, rng)) out.push_back(j);
        }
    }
    return out;
}

heightmap::BinGeometry synthetic_bin() {
    heightmap::BinGeometry bin;
    bin.origin = Eigen::Vector3d(0.0, 0.0, 0.0);
    bin.x_extent = 0.30;
    bin.y_extent = 0.20;
    bin.wall_margin = 0.02;
    return bin;
}

void synthesize_label_dataset(const fs::path& root, const SyntheticDatasetParams& params, std::uint64_t seed) {
    const auto bin = synthetic_bin();
    const auto cameras = synthetic::bin_cameras(bin, params.width, params.height);
    const affordance::GripperParams gripper;
    Rng rng(seed);
    fs::create_directories(root);
    synthetic::Scene empty;
    empty.floor_z = bin.origin.z();
    for (std::size_t s = 0; s < params.scenes; ++s) {
        const auto scene = synthetic::random_bin_scene(bin, rng);
        SceneInput input;
        input.bin = bin;
        std::vector<SuctionLabelMask> masks;
        for (const auto& cam : cameras) {
            input.frames.push_back(scene.render(cam.intrinsics, cam.pose));
            input.empty_frames.push_back(empty.render(cam.intrinsics, cam.pose));
            masks.push_back(label_suction_view(scene, input.frames.back()));
        }
        const auto grasps = label_grasps(scene, bin, params.resolution, gripper.max_opening, params.jitter, rng);
        char name[32];
        std::snprintf(name, sizeof name, "scene_%04zu", s);
        write_labeled_scene(root / name, input, masks, grasps);
    }
}

Method parse_method(std::string_view name) {
    if (name == "baseline") return Method::baseline;
    if (name == "learned") return Method::learned;
    throw InvalidArgument("unknown method '" + std::string(name) + "' (expected baseline or learned)");
}

PrecisionTable evaluate_scene(const LabeledScene& item, Method method, const affordance::BaselineOptions& options) {
    const auto result =
        method == Method::baseline
            ? affordance::run_baselines(item.scene.frames, item.scene.empty_frames, item.scene.bin, options)
            : affordance::run_learned(item.scene.frames, item.scene.empty_frames, item.scene.bin,
                                      read_learned_maps(item.dir, item.scene, options), options);
    PrecisionTable t;
    for (std::size_t i = 0; i < kSlices.size(); ++i) {
        t.suction[i] = suction_precision(result.suction_proposals, item.suction_masks, kSlices[i]);
        t.grasp[i] = grasp_precision(result.grasp_proposals, item.grasp_labels, kSlices[i]);
    }
    return t;
}

// ---------------------------------------------------------------------------
// Recognition benchmark

void BenchmarkCase::validate(const recognition::ProductCatalog& catalog) const {
    if (candidates.size() != 20) throw InvalidArgument("benchmark case needs exactly 20 candidates");
    std::vector<std::string> sorted = candidates;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
        throw InvalidArgument("benchmark case has duplicate candidates");
    std::size_t known = 0;
    for (const auto& c : candidates) known += catalog.at(c).known;
    if (known != 10) throw InvalidArgument("benchmark case needs 10 known and 10 novel candidates");
    if (std::find(candidates.begin(), candidates.end(), ground_truth) == candidates.end())
        throw InvalidArgument("benchmark ground truth is not a candidate");
    if (catalog.at(ground_truth).known != ground_truth_known)
        throw InvalidArgument("benchmark ground-truth known flag disagrees with the catalog");
}

std::vector<BenchmarkCase> make_benchmark_cases(const synthetic::FeatureWorld& world, std::size_t count, Rng& rng) {
    if (world.known().size() < 10 || world.novel().size() < 10)
        throw InvalidArgument("benchmark needs at least 10 known and 10 novel objects");
    std::vector<BenchmarkCase> cases;
    cases.reserve(count);
    for (std::size_t t = 0; t < count; ++t) {
        auto known = world.known(), novel = world.novel();
        rng.shuffle(known);
        rng.shuffle(novel);
        BenchmarkCase c;
        for (std::size_t i = 0; i < 10; ++i) c.candidates.push_back(world.ids()[known[i]]);
        for (std::size_t i = 0; i < 10; ++i) c.candidates.push_back(world.ids()[novel[i]]);
        const auto g = static_cast<std::size_t>(rng.index(20));
        const std::size_t object = g < 10 ? known[g] : novel[g - 10];
        c.ground_truth = world.ids()[object];
        c.ground_truth_known = g < 10;
        c.observed = world.observe(object, rng);
        cases.push_back(std::move(c));
    }
    return cases;
}

std::vector<BenchmarkCase> make_benchmark_cases(const recognition::ProductCatalog& catalog,
                                                std::span<const recognition::TrainingSample> pool, std::size_t count,
                                                Rng& rng) {
    std::vector<std::string> known, novel;
    for (const auto& e : catalog.entries()) (e.known ? known : novel).push_back(e.object_id);
    if (known.size() < 10 || novel.size() < 10)
        throw InvalidArgument("benchmark needs at least 10 known and 10 novel catalog objects");
    if (pool.empty()) throw InvalidArgument("benchmark needs observations");
    std::vector<BenchmarkCase> cases;
    cases.reserve(count);
    for (std::size_t t = 0; t < count; ++t) {
        const auto& obs = pool[rng.index(pool.size())];
        const bool gt_known = catalog.at(obs.object_id).known;
        auto same = gt_known ? known : novel;
        auto other = gt_known ? novel : known;
        same.erase(std::find(same.begin(), same.end(), obs.object_id));
        rng.shuffle(same);
        rng.shuffle(other);
        same.resize(9);
        same.insert(same.begin() + static_cast<std::ptrdiff_t>(rng.index(10)), obs.object_id);
        other.resize(10);
        BenchmarkCase c;
        c.candidates = gt_known ? same : other;
        const auto& rest = gt_known ? other : same;
        c.candidates.insert(c.candidates.end(), rest.begin(), rest.end());
        c.observed = obs.observed;
        c.ground_truth = obs.object_id;
        c.ground_truth_known = gt_known;
        cases.push_back(std::move(c));
    }
    return cases;
}

double BenchmarkTable::known() const {
    return known_cases ? static_cast<double>(known_correct) / static_cast<double>(known_cases) : 0.0;
}

double BenchmarkTable::novel() const {
    const std::size_t n = cases - known_cases;
    return n ? static_cast<double>(novel_correct) / static_cast<double>(n) : 0.0;
}

double BenchmarkTable::mixed() const {
    return cases ? static_cast<double>(known_correct + novel_correct) / static_cast<double>(cases) : 0.0;
}

std::optional<double> BenchmarkTable::k_vs_n() const {
    if (stage_cases == 0) return std::nullopt;
    return static_cast<double>(stage_correct) / static_cast<double>(stage_cases);
}

nlohmann::json BenchmarkTable::to_json() const {
    const auto kvn = k_vs_n();
    return {{"cases", cases},
            {"k_vs_n", kvn ? nlohmann::json(*kvn) : nlohmann::json(nullptr)},
            {"known", known()},
            {"novel", novel()},
            {"mixed", mixed()}};
}

BenchmarkTable run_1v20_benchmark(std::span<const BenchmarkCase> cases, const Pipeline& pipeline) {
    BenchmarkTable t;
    for (const auto& c : cases) {
        const auto answer = pipeline(c);
        const bool correct = answer.top1 == c.ground_truth;
        ++t.cases;
        if (c.ground_truth_known) {
            ++t.known_cases;
            t.known_correct += correct;
        } else {
            t.novel_correct += correct;
        }
        if (answer.stage) {
            ++t.stage_cases;
            t.stage_correct += (*answer.stage == recognition::Verdict::known) == c.ground_truth_known;
        }
    }
    return t;
}

Pipeline oracle_pipeline() {
    return [](const BenchmarkCase& c) {
        return PipelineAnswer{c.ground_truth,
                              c.ground_truth_known ? recognition::Verdict::known : recognition::Verdict::novel};
    };
}

Pipeline random_pipeline(std::uint64_t seed) {
    auto rng = std::make_shared<Rng>(seed);
    return [rng](const BenchmarkCase& c) {
        return PipelineAnswer{c.candidates[rng->index(c.candidates.size())], std::nullopt};
    };
}

Pipeline single_model_pipeline(const recognition::EmbeddingModel& model, const recognition::ProductCatalog& catalog) {
    return [&model, &catalog](const BenchmarkCase& c) {
        return PipelineAnswer{recognition::rank_candidates(model, c.observed, catalog, c.candidates).front(),
                              std::nullopt};
    };
}

Pipeline two_stage_pipeline(const recognition::RecognitionConfig& config, const recognition::ProductCatalog& catalog) {
    config.validate();
    return [config, &catalog](const BenchmarkCase& c) {
        const auto r = recognition::recognize(c.observed, config, catalog, c.candidates);
        return PipelineAnswer{r.ranking.front(), r.stage};
    };
}

nlohmann::json RecognitionBenchmark::to_json() const {
    return {{"k_threshold", k_threshold},
            {"knet", knet.to_json()},
            {"nnet", nnet.to_json()},
            {"two_stage", two_stage.to_json()},
            {"knet_epoch_loss", knet_report.epoch_loss},
            {"nnet_epoch_loss", nnet_report.epoch_loss}};
}

RecognitionBenchmark evaluate_recognition(const recognition::ProductCatalog& catalog,
                                          std::span<const recognition::TrainingSample> train,
                                          std::span<const recognition::TrainingSample> validation,
                                          std::span<const BenchmarkCase> cases, const recognition::TrainConfig& training) {
    RecognitionBenchmark out;
    out.nnet_model = recognition::train_embedding(train, catalog, training, &out.nnet_report);
    out.knet_model = recognition::train_knet(train, catalog, training, &out.knet_report);
    out.k_threshold = recognition::calibrate_k(validation, out.knet_model, catalog);
    for (const auto& c : cases) c.validate(catalog);
    out.knet = run_1v20_benchmark(cases, single_model_pipeline(out.knet_model, catalog));
    out.nnet = run_1v20_benchmark(cases, single_model_pipeline(out.nnet_model, catalog));
    out.two_stage =
        run_1v20_benchmark(cases, two_stage_pipeline({out.k_threshold, &out.knet_model, &out.nnet_model}, catalog));
    return out;
}

RecognitionBenchmark run_recognition_benchmark(const RecognitionBenchmarkConfig& config) {
    const synthetic::FeatureWorld world(config.world, config.seed);
    const auto catalog = world.catalog();
    Rng train_rng(config.seed * 1000 + 1), val_rng(config.seed * 1000 + 5), case_rng(config.seed * 1000 + 9);
    const auto train = world.training_set(config.train_per_object, train_rng);
    const auto validation = world.validation_set(config.validation, val_rng);
    const auto cases = make_benchmark_cases(world, config.cases, case_rng);
    recognition::TrainConfig tc = config.training;
    tc.seed = config.seed;
    return evaluate_recognition(catalog, train, validation, cases, tc);
}

}  // namespace arcpick::evaluation
