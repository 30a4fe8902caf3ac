#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>

#include "arcpick/affordance.hpp"
#include "arcpick/io.hpp"
#include "arcpick/synthetic.hpp"
#include "doctest.h"
#include "oracles.hpp"
#include "support.hpp"

using namespace arcpick;
using namespace arcpick::affordance;
using arcpick::testing::deg;

namespace {

heightmap::BinGeometry test_bin() {
    heightmap::BinGeometry bin;
    bin.origin = {0.0, 0.0, 0.0};
    bin.x_extent = 0.3;
    bin.y_extent = 0.2;
    bin.wall_margin = 0.02;
    return bin;
}

heightmap::Heightmap flat_map(const heightmap::BinGeometry& bin, double res = 0.002) {
    synthetic::Scene s;
    return s.render_heightmap(bin, res);
}

// 10 cm x 4 cm x 5 cm box, long axis along x, centered between pixel rows.
synthetic::Scene centered_box_scene(const heightmap::BinGeometry& bin, double size_y = 0.04) {
    synthetic::Scene s;
    s.boxes.push_back(synthetic::resting_box(0.151, 0.101, 0.10, size_y, 0.05, 0.0));
    (void)bin;
    return s;
}

float map_max(const AffordanceMap& m) { return *std::max_element(m.values.data().begin(), m.values.data().end()); }

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("arcpick_test_" + name);
}

rgbd::PointCloud plane_cloud(double spacing, int half) {
    rgbd::PointCloud c;
    for (int i = -half; i <= half; ++i)
        for (int j = -half; j <= half; ++j) c.push_back({i * spacing, j * spacing, 0.0});
    c.normals.assign(c.size(), Eigen::Vector3d::UnitZ());
    c.normal_valid.assign(c.size(), 1);
    return c;
}

}  // namespace

TEST_CASE("primitive codes") {
    CHECK(to_string(PrimitiveKind::suction_down) == "sd");
    CHECK(to_string(PrimitiveKind::flush_grasp) == "fg");
    for (auto k : {PrimitiveKind::suction_down, PrimitiveKind::suction_side, PrimitiveKind::grasp_down,
                   PrimitiveKind::flush_grasp})
        CHECK(parse_primitive(to_string(k)) == k);
    CHECK_THROWS_AS(parse_primitive("xx"), InvalidArgument);
    CHECK(is_suction(PrimitiveKind::suction_side));
    CHECK_FALSE(is_suction(PrimitiveKind::grasp_down));
}

TEST_CASE("grasp_baseline on a flat map is all zero") {
    const auto bin = test_bin();
    const auto maps = grasp_baseline(flat_map(bin), heightmap::RotationSet::make());
    REQUIRE(maps.size() == 16);
    for (std::size_t i = 0; i < maps.size(); ++i) {
        CHECK(map_max(maps[i]) == 0.0f);
        CHECK(maps[i].kind == MapKind::grasp);
        CHECK(*maps[i].angle == doctest::Approx(i * std::numbers::pi / 16));
        CHECK_NOTHROW(maps[i].validate());
    }
}

TEST_CASE("grasp_baseline on a single 4 cm box") {
    const auto bin = test_bin();
    const auto scene = centered_box_scene(bin);
    const auto hm = scene.render_heightmap(bin, 0.002);
    const auto rotations = heightmap::RotationSet::make();
    const GripperParams gripper;
    const auto maps = grasp_baseline(hm, rotations, gripper);

    float best = -1.0f;
    std::size_t best_angle = 0;
    long best_row = 0, best_col = 0;
    for (std::size_t i = 0; i < maps.size(); ++i) {
        CHECK_NOTHROW(maps[i].validate());
        for (long r = 0; r < static_cast<long>(hm.rows()); ++r)
            for (long c = 0; c < static_cast<long>(hm.cols()); ++c)
                if (maps[i].values(r, c) > best) {
                    best = maps[i].values(r, c);
                    best_angle = i;
                    best_row = r;
                    best_col = c;
                }
    }
    REQUIRE(best > 0.0f);
    // Closing axis across the 4 cm width, i.e. perpendicular to the long axis.
    CHECK(best_angle == 8);
    const Eigen::Vector3d p = heightmap::pixel_to_world(hm, best_row, best_col);
    CHECK(std::abs(p.y() - 0.101) <= hm.resolution);
    CHECK(std::abs(p.x() - 0.151) < 0.05);

    // Every positive (pixel, angle) is a feasible grasp by the analytic check.
    std::size_t positives = 0, infeasible = 0;
    for (std::size_t i = 0; i < maps.size(); ++i)
        for (long r = 0; r < static_cast<long>(hm.rows()); ++r)
            for (long c = 0; c < static_cast<long>(hm.cols()); ++c) {
                if (maps[i].values(r, c) <= 0.0f) continue;
                ++positives;
                const Eigen::Vector3d q = heightmap::pixel_to_world(hm, r, c);
                if (!testing::analytic_grasp_valid(scene, bin, q.head<2>(), rotations.angles[i], gripper,
                                                   2.0 * hm.resolution))
                    ++infeasible;
            }
    CHECK(positives > 0);
    CHECK(infeasible == 0);
}

TEST_CASE("grasp_baseline rejects objects wider than the opening") {
    const auto bin = test_bin();
    synthetic::Scene scene;
    scene.boxes.push_back(synthetic::resting_box(0.15, 0.1, 0.10, 0.10, 0.05, 0.0));
    const auto maps = grasp_baseline(scene.render_heightmap(bin, 0.002), heightmap::RotationSet::make());
    for (const auto& m : maps) CHECK(map_max(m) == 0.0f);
}

TEST_CASE("grasp maps are translation equivariant") {
    const auto bin = test_bin();
    Rng rng(17);
    synthetic::ClutterParams params;
    params.max_size = 0.06;
    const auto scene = synthetic::random_bin_scene(bin, rng, params);
    const auto hm = scene.render_heightmap(bin, 0.004);
    const long dr = 3, dc = -5;
    heightmap::Heightmap big = hm, moved = hm;
    const std::size_t pad = 40;
    big.height = Grid<float>(hm.rows() + 2 * pad, hm.cols() + 2 * pad, 0.0f);
    moved.height = big.height;
    for (std::size_t r = 0; r < hm.rows(); ++r)
        for (std::size_t c = 0; c < hm.cols(); ++c) {
            big.height(r + pad, c + pad) = hm.height(r, c);
            moved.height(r + pad + dr, c + pad + dc) = hm.height(r, c);
        }
    const auto rot = heightmap::RotationSet::make();
    const auto a = grasp_baseline(big, rot), b = grasp_baseline(moved, rot);
    std::size_t mismatches = 0;
    float peak = 0.0f;
    for (std::size_t i = 0; i < rot.n; ++i)
        for (long r = 0; r < static_cast<long>(big.height.rows()); ++r)
            for (long c = 0; c < static_cast<long>(big.height.cols()); ++c) {
                peak = std::max(peak, a[i].values(r, c));
                if (!b[i].values.in_bounds(r + dr, c + dc)) continue;
                if (a[i].values(r, c) != b[i].values(r + dr, c + dc)) ++mismatches;
            }
    CHECK(peak > 0.0f);
    CHECK(mismatches == 0);
}

TEST_CASE("quarter-turn scene rotation shifts grasp maps by n/2 angles") {
    const auto bin = test_bin();
    Rng rng(5);
    synthetic::ClutterParams params;
    params.max_size = 0.06;
    const auto hm = synthetic::random_bin_scene(bin, rng, params).render_heightmap(bin, 0.004);
    const auto turned = heightmap::rotate_heightmap(hm, std::numbers::pi / 2);
    const auto rot = heightmap::RotationSet::make(16);
    const auto a = grasp_baseline(hm, rot), b = grasp_baseline(turned, rot);
    float peak = 0.0f;
    for (std::size_t i = 0; i < 16; ++i) {
        const auto expect = heightmap::rotate_grid(a[i].values, std::numbers::pi / 2);
        CHECK(expect == b[(i + 8) % 16].values);
        peak = std::max(peak, map_max(a[i]));
    }
    CHECK(peak > 0.0f);
}

TEST_CASE("learned map files") {
    const auto path = temp_file("map.affd");
    AffordanceMap m;
    m.kind = MapKind::suction;
    m.values = Grid<float>(12, 7, 0.5f);

    SUBCASE("uniform map round trips bit-identically") {
        save_affordance_map(path, m);
        const auto back = load_learned_map(path, 12, 7);
        CHECK(back.values == m.values);
        CHECK(back.source == MapSource::learned_file);
        CHECK_FALSE(back.angle.has_value());
        Rng rng(3);
        AffordanceMap g;
        g.kind = MapKind::grasp;
        g.angle = 3 * std::numbers::pi / 16;
        g.values = Grid<float>(5, 9);
        for (auto& v : g.values.data()) v = static_cast<float>(rng.uniform());
        save_affordance_map(path, g);
        const auto gb = load_learned_map(path);
        CHECK(gb.values == g.values);
        CHECK(gb.kind == MapKind::grasp);
        CHECK(*gb.angle == doctest::Approx(*g.angle).epsilon(1e-7));
    }
    SUBCASE("dimension mismatch") {
        save_affordance_map(path, m);
        CHECK_THROWS_AS(load_learned_map(path, 7, 12), FormatError);
    }
    SUBCASE("non-finite values are rejected") {
        m.values(3, 3) = std::numeric_limits<float>::quiet_NaN();
        save_affordance_map(path, m);
        CHECK_THROWS_AS(load_learned_map(path), FormatError);
        m.values(3, 3) = std::numeric_limits<float>::infinity();
        save_affordance_map(path, m);
        CHECK_THROWS_AS(load_learned_map(path), FormatError);
    }
    SUBCASE("out of range values are clamped") {
        m.values(0, 0) = 1.7f;
        m.values(0, 1) = -0.2f;
        save_affordance_map(path, m);
        const auto back = load_learned_map(path);
        CHECK(back.values(0, 0) == 1.0f);
        CHECK(back.values(0, 1) == 0.0f);
        CHECK_NOTHROW(back.validate());
    }
    SUBCASE("byte layout, bad magic and truncation") {
        save_affordance_map(path, m);
        CHECK(std::filesystem::file_size(path) == 24 + 4 * 12 * 7);
        std::vector<char> bytes(std::filesystem::file_size(path));
        std::ifstream(path, std::ios::binary).read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        CHECK(std::string(bytes.data(), 4) == "AFFD");
        CHECK(static_cast<unsigned char>(bytes[8]) == 12);  // H, little-endian
        CHECK(static_cast<unsigned char>(bytes[12]) == 7);   // W
        {
            std::ofstream out(path, std::ios::binary);
            out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 3));
        }
        CHECK_THROWS_AS(load_learned_map(path), FormatError);
        bytes[0] = 'X';
        {
            std::ofstream out(path, std::ios::binary);
            out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        }
        CHECK_THROWS_AS(load_learned_map(path), FormatError);
    }
    SUBCASE("missing file") { CHECK_THROWS(load_learned_map(temp_file("does_not_exist"))); }
    std::filesystem::remove(path);
}

TEST_CASE("AffordanceMap::validate") {
    AffordanceMap m;
    m.values = Grid<float>(2, 2, 0.3f);
    CHECK_NOTHROW(m.validate());
    m.angle = 0.0;
    CHECK_THROWS_AS(m.validate(), InvalidArgument);
    m.kind = MapKind::grasp;
    CHECK_NOTHROW(m.validate());
    m.values(1, 1) = 1.5f;
    CHECK_THROWS_AS(m.validate(), InvalidArgument);
}

TEST_CASE("suction_baseline examples") {
    SUBCASE("plane interior scores 1") {
        auto c = plane_cloud(0.002, 20);
        const auto a = suction_baseline(c);
        for (double v : a) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("isolated point without a valid normal scores 0") {
        rgbd::PointCloud c;
        c.push_back({0, 0, 0});
        c = rgbd::estimate_normals(c);
        REQUIRE(c.normal_valid[0] == 0);
        CHECK(suction_baseline(c)[0] == 0.0);
    }
    SUBCASE("plane beats a 2 cm sphere everywhere") {
        rgbd::PointCloud c = plane_cloud(0.002, 20);
        const std::size_t plane_count = c.size();
        const int n = 4000;
        const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
        for (int i = 0; i < n; ++i) {
            const double z = 1.0 - 2.0 * (i + 0.5) / n;
            const double r = std::sqrt(1.0 - z * z);
            const Eigen::Vector3d u(r * std::cos(golden * i), r * std::sin(golden * i), z);
            c.push_back(Eigen::Vector3d(1.0, 0.0, 0.0) + 0.02 * u);
            c.normals.push_back(u);
            c.normal_valid.push_back(1);
        }
        const auto a = suction_baseline(c);
        // Oracle: on a sphere of radius R, normals in a window of radius w span a
        // cap of half-angle ~2 asin(w / 2R); the mean normal is strictly shorter than 1.
        const double cap = 2.0 * std::asin(0.01 / 0.04);
        const double expected_var = 1.0 - std::pow((1.0 + std::cos(cap)) / 2.0, 2.0);
        double plane_min = 1.0, sphere_max = 0.0, sphere_mean = 0.0;
        for (std::size_t i = 0; i < c.size(); ++i) {
            if (i < plane_count) plane_min = std::min(plane_min, a[i]);
            else {
                sphere_max = std::max(sphere_max, a[i]);
                sphere_mean += a[i] / n;
            }
        }
        CHECK(plane_min > sphere_max);
        CHECK(sphere_mean == doctest::Approx(std::exp(-50.0 * expected_var)).epsilon(0.05));
    }
    SUBCASE("values stay in [0, 1] and empty input is fine") {
        CHECK(suction_baseline(rgbd::PointCloud{}).empty());
        rgbd::PointCloud c;
        c.push_back({0, 0, 0});
        CHECK_THROWS_AS(suction_baseline(c), InvalidArgument);
    }
}

TEST_CASE("suction_baseline decreases under normal noise") {
    Rng rng(8);
    int decreased = 0;
    double clean_total = 0.0, noisy_total = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        auto c = plane_cloud(0.003, 8);
        const auto clean = suction_baseline(c);
        const double sigma = rng.uniform(0.02, 0.3);
        for (auto& nrm : c.normals) nrm = (nrm + Eigen::Vector3d(rng.normal(0, sigma), rng.normal(0, sigma), rng.normal(0, sigma))).normalized();
        const auto noisy = suction_baseline(c);
        double cm = 0.0, nm = 0.0;
        for (std::size_t i = 0; i < c.size(); ++i) {
            cm += clean[i];
            nm += noisy[i];
        }
        decreased += nm < cm;
        clean_total += cm;
        noisy_total += nm;
    }
    CHECK(decreased == 100);
    CHECK(noisy_total < clean_total);
}

TEST_CASE("make_suction_proposals") {
    rgbd::PointCloud c;
    const double t = deg(60);
    c.push_back({0, 0, 0}, Rgb{}, rgbd::SourcePixel{0, 1, 1});
    c.push_back({0.1, 0, 0}, Rgb{}, rgbd::SourcePixel{0, 1, 2});
    c.push_back({0.2, 0, 0}, Rgb{}, rgbd::SourcePixel{0, 2, 2});
    c.push_back({0.3, 0, 0}, Rgb{}, rgbd::SourcePixel{0, 0, 0});
    c.normals = {Eigen::Vector3d::UnitZ(), Eigen::Vector3d(std::sin(t), 0, std::cos(t)), Eigen::Vector3d::UnitZ(),
                 Eigen::Vector3d::UnitZ()};
    c.normal_valid = {1, 1, 1, 0};
    const std::vector<double> aff = {0.4, 0.9, 0.4, 1.0};

    SUBCASE("classification, ordering and invalid normals") {
        const auto props = make_suction_proposals(c, aff, {});
        REQUIRE(props.size() == 3);
        CHECK(props[0].point_index == 1);
        CHECK(props[0].primitive == PrimitiveKind::suction_side);
        CHECK(props[1].point_index == 0);
        CHECK(props[1].primitive == PrimitiveKind::suction_down);
        CHECK(props[2].point_index == 2);
    }
    SUBCASE("threshold boundary") {
        SuctionProposalParams p;
        p.down_angle_threshold = deg(61);
        CHECK(make_suction_proposals(c, aff, {}, p)[0].primitive == PrimitiveKind::suction_down);
    }
    SUBCASE("background mask filters") {
        Mask fg(3, 3, 0);
        std::vector<Mask> masks = {fg};
        CHECK(make_suction_proposals(c, aff, masks).empty());
        masks[0](2, 2) = 1;
        const auto props = make_suction_proposals(c, aff, masks);
        REQUIRE(props.size() == 1);
        CHECK(props[0].point_index == 2);
    }
    SUBCASE("misaligned affordances") {
        CHECK_THROWS_AS(make_suction_proposals(c, std::vector<double>{1.0}, {}), InvalidArgument);
    }
}

TEST_CASE("make_grasp_proposals primitives and width") {
    auto bin = test_bin();
    bin.wall_margin = 0.05;
    const auto rot = heightmap::RotationSet::make();

    SUBCASE("wall distance decides flush vs down") {
        const auto hm = flat_map(bin);
        std::vector<AffordanceMap> maps;
        for (std::size_t i = 0; i < 16; ++i) {
            AffordanceMap m;
            m.kind = MapKind::grasp;
            m.angle = rot.angles[i];
            m.values = Grid<float>(hm.rows(), hm.cols(), 0.0f);
            maps.push_back(m);
        }
        maps[0].values(5, 75) = 0.8f;   // 1 cm from the y = 0 wall
        maps[4].values(50, 75) = 0.6f;  // bin center
        const auto props = make_grasp_proposals(hm, maps, bin, Mask{});
        REQUIRE(props.size() == 2);
        CHECK(props[0].primitive == PrimitiveKind::flush_grasp);
        CHECK(props[0].affordance == doctest::Approx(0.8));
        CHECK(props[1].primitive == PrimitiveKind::grasp_down);
        CHECK(props[1].angle_index == 4);
        CHECK(wall_distance(bin, props[0].midpoint) == doctest::Approx(0.01));
        for (const auto& p : props) CHECK((p.width > 0.0 && p.width <= GripperParams{}.max_opening));

        Mask fg(hm.rows(), hm.cols(), 0);
        fg(50, 75) = 1;
        const auto filtered = make_grasp_proposals(hm, maps, bin, fg);
        REQUIRE(filtered.size() == 1);
        CHECK(filtered[0].pixel == PixelIndex{50, 75});
    }

    SUBCASE("4 cm box opens to 4 cm plus clearance") {
        const auto scene = centered_box_scene(bin);
        const auto hm = scene.render_heightmap(bin, 0.002);
        const auto maps = grasp_baseline(hm, rot);
        const auto props = make_grasp_proposals(hm, maps, bin, Mask{});
        REQUIRE_FALSE(props.empty());
        CHECK(props[0].angle_index == 8);
        CHECK(std::abs(props[0].width - (0.04 + GripperParams{}.width_clearance)) <= hm.resolution);
        CHECK(props[0].primitive == PrimitiveKind::grasp_down);
        for (std::size_t i = 1; i < props.size(); ++i) CHECK(props[i - 1].affordance >= props[i].affordance);
        const auto again = make_grasp_proposals(hm, maps, bin, Mask{});
        REQUIRE(again.size() == props.size());
        for (std::size_t i = 0; i < props.size(); ++i) {
            CHECK(again[i].pixel == props[i].pixel);
            CHECK(again[i].angle_index == props[i].angle_index);
        }
    }

    SUBCASE("maps must follow the rotation order") {
        const auto hm = flat_map(bin);
        auto maps = grasp_baseline(hm, rot);
        std::swap(maps[1], maps[2]);
        CHECK_THROWS_AS(make_grasp_proposals(hm, maps, bin, Mask{}), InvalidArgument);
    }
}
