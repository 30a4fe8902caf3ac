#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>

#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "arcpick_cli_test";

/// Runs the CLI in kRoot with output captured to out.txt; returns the exit code.
int run(const std::string& args) {
    fs::create_directories(kRoot);
    const std::string cmd = "cd '" + kRoot.string() + "' && '" ARCPICK_CLI "' " + args + " > out.txt 2>&1";
    const int status = std::system(cmd.c_str());
    REQUIRE(WIFEXITED(status));
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string output() { return slurp(kRoot / "out.txt"); }

/// Every regular file under a matches the same relative path under b, byte for byte.
void check_same_tree(const fs::path& a, const fs::path& b) {
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (!e.is_regular_file()) continue;
        const auto rel = fs::relative(e.path(), a);
        CAPTURE(rel.string());
        REQUIRE(fs::exists(b / rel));
        CHECK(slurp(e.path()) == slurp(b / rel));
        ++files;
    }
    CHECK(files > 0);
}

struct Fresh {
    Fresh() {
        fs::remove_all(kRoot);
        fs::create_directories(kRoot);
    }
};

}  // namespace

TEST_CASE_FIXTURE(Fresh, "usage errors exit with 2") {
    CHECK(run("") == 2);
    CHECK(run("frobnicate") == 2);
    CHECK(run("--help") == 0);
    CHECK(run("evaluate") == 2);
    CHECK(run("affordance missing_scene --out aff") == 2);
    CHECK(output().find("not found") != std::string::npos);
    CHECK(run("evaluate missing_dataset") == 2);
    CHECK(run("recognize --features missing --catalog missing") == 2);
    CHECK(run("recognize --features only_one") == 2);
    CHECK(run("stow --config missing.json") == 2);
    CHECK(run("stow --gamma-sd 1.5") == 2);
    CHECK(run("stow --suppression-radius 0") == 2);
    CHECK(run("affordance x --out y --method magic") == 2);
}

TEST_CASE_FIXTURE(Fresh, "synthetic dataset, affordance and evaluation") {
    REQUIRE(run("synth dataset ds --scenes 5 --seed 7") == 0);
    REQUIRE(run("synth dataset ds_again --scenes 5 --seed 7") == 0);
    check_same_tree(kRoot / "ds", kRoot / "ds_again");

    REQUIRE(run("affordance ds/scene_0000 --out aff1") == 0);
    REQUIRE(run("affordance ds/scene_0000 --out aff2") == 0);
    CHECK(fs::exists(kRoot / "aff1" / "proposals.json"));
    CHECK(fs::exists(kRoot / "aff1" / "000.suction.affd"));
    CHECK(fs::exists(kRoot / "aff1" / "grasp_15.affd"));
    check_same_tree(kRoot / "aff1", kRoot / "aff2");

    REQUIRE(run("evaluate ds --split all --out t1.json") == 0);
    const auto printed = output();
    CHECK(printed.find("suction") != std::string::npos);
    CHECK(printed.find("top10%") != std::string::npos);
    REQUIRE(run("evaluate ds --split all --out t2.json") == 0);
    CHECK(slurp(kRoot / "t1.json") == slurp(kRoot / "t2.json"));

    // The affordance output doubles as learned maps for the same scene.
    for (const auto& e : fs::directory_iterator(kRoot / "aff1"))
        if (e.path().extension() == ".affd") fs::copy_file(e.path(), kRoot / "ds" / "scene_0000" / e.path().filename());
    REQUIRE(run("affordance ds/scene_0000 --method learned --out aff3") == 0);
    // Maps are stored as float32, so affordances agree to float precision.
    const auto learned = nlohmann::json::parse(slurp(kRoot / "aff3" / "proposals.json"));
    const auto baseline = nlohmann::json::parse(slurp(kRoot / "aff1" / "proposals.json"));
    // Near ties may swap order, so primitives are compared as counts.
    for (const char* family : {"suction", "grasp"}) {
        REQUIRE(learned[family].size() == baseline[family].size());
        std::map<std::string, int> kinds;
        for (std::size_t i = 0; i < learned[family].size(); ++i) {
            const auto& l = learned[family][i];
            const auto& b = baseline[family][i];
            CHECK(l["affordance"].get<double>() == doctest::Approx(b["affordance"].get<double>()).epsilon(1e-6));
            ++kinds[l["primitive"].get<std::string>()];
            --kinds[b["primitive"].get<std::string>()];
        }
        for (const auto& [kind, diff] : kinds) CHECK(diff == 0);
    }
    CHECK(run("affordance ds/scene_0001 --method learned --out aff4") == 2);

    // Corrupt labels are malformed input.
    std::ofstream(kRoot / "ds" / "scene_0002" / "grasp_labels.json") << "{";
    CHECK(run("evaluate ds --split all --out t3.json") == 2);
}

TEST_CASE_FIXTURE(Fresh, "stow episodes are reproducible") {
    std::ofstream(kRoot / "planner.json") << R"({"gamma": {"gd": 0.8}, "failure_window": 120})";
    REQUIRE(run("stow --objects 4 --seed 5 --config planner.json --log a.jsonl --time-limit 200") == 0);
    const auto summary = output();
    CHECK(summary.find("pick success with suction") != std::string::npos);
    REQUIRE(run("stow --objects 4 --seed 5 --config planner.json --log b.jsonl --time-limit 200") == 0);
    CHECK(summary == output());
    const auto log = slurp(kRoot / "a.jsonl");
    CHECK(log == slurp(kRoot / "b.jsonl"));
    CHECK(log.find("\"gd\":0.8") != std::string::npos);
    CHECK(log.find("\"failure_window\":120.0") != std::string::npos);

    // Flags override the config file.
    REQUIRE(run("stow --objects 4 --seed 5 --config planner.json --gamma-gd 0.3 --log c.jsonl --time-limit 200") == 0);
    CHECK(slurp(kRoot / "c.jsonl").find("\"gd\":0.3") != std::string::npos);

    std::ofstream(kRoot / "bad.json") << R"({"bogus": 1})";
    CHECK(run("stow --config bad.json") == 2);
}

TEST_CASE_FIXTURE(Fresh, "recognition runs are reproducible") {
    REQUIRE(run("recognize --seed 2 --out r1") == 0);
    const auto table = output();
    CHECK(table.find("K-vs-N") != std::string::npos);
    CHECK(table.find("two-stage") != std::string::npos);
    REQUIRE(run("recognize --seed 2 --out r2") == 0);
    CHECK(table == output());
    check_same_tree(kRoot / "r1", kRoot / "r2");

    REQUIRE(run("recognize --seed 2 --train --out r3") == 0);
    CHECK(fs::exists(kRoot / "r3" / "knet.embd"));
    CHECK(slurp(kRoot / "r3" / "knet.embd") == slurp(kRoot / "r1" / "knet.embd"));

    REQUIRE(run("synth features feat --seed 3") == 0);
    REQUIRE(run("recognize --features feat/features --catalog feat/catalog --seed 3 --out r4") == 0);
    REQUIRE(run("recognize --features feat/features --catalog feat/catalog --seed 3 --out r5") == 0);
    check_same_tree(kRoot / "r4", kRoot / "r5");

    std::ofstream(kRoot / "feat" / "features" / "train.feat", std::ios::binary) << "FEAT";
    CHECK(run("recognize --features feat/features --catalog feat/catalog --out r6") == 2);
}
