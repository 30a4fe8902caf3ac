#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "arcpick/affordance.hpp"
#include "arcpick/core.hpp"
#include "arcpick/evaluation.hpp"
#include "arcpick/feature_world.hpp"
#include "arcpick/planner.hpp"
#include "arcpick/recognition.hpp"
#include "arcpick/synthetic.hpp"
#include "json.hpp"

using namespace arcpick;
namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kInternal = 1;
constexpr int kUsage = 2;

/// Bad user input detected after argument parsing.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require_dir(const fs::path& dir, const std::string& what) {
    if (!fs::is_directory(dir)) throw UsageError(what + " not found: " + dir.string());
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw Error("cannot write " + path.string());
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

std::string percent(std::optional<double> v) {
    if (!v) return "-";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", 100.0 * *v);
    return buf;
}

nlohmann::json vec_json(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }

// ---------------------------------------------------------------------------
// affordance

struct AffordanceArgs {
    std::string scene_dir;
    std::string method = "baseline";
    std::string out;
    double resolution = 0.002;
    std::size_t rotations = 16;
};

nlohmann::json proposals_json(const affordance::BaselineResult& r) {
    nlohmann::json suction = nlohmann::json::array();
    for (const auto& p : r.suction_proposals)
        suction.push_back({{"primitive", affordance::to_string(p.primitive)},
                           {"affordance", p.affordance},
                           {"point", vec_json(p.point)},
                           {"normal", vec_json(p.normal)},
                           {"frame", p.pixel.frame},
                           {"row", p.pixel.row},
                           {"col", p.pixel.col}});
    nlohmann::json grasp = nlohmann::json::array();
    for (const auto& g : r.grasp_proposals)
        grasp.push_back({{"primitive", affordance::to_string(g.primitive)},
                         {"affordance", g.affordance},
                         {"midpoint", vec_json(g.midpoint)},
                         {"angle_rad", g.angle},
                         {"angle_index", g.angle_index},
                         {"width", g.width},
                         {"row", g.pixel.row},
                         {"col", g.pixel.col}});
    return {{"suction", suction}, {"grasp", grasp}};
}

int cmd_affordance(const AffordanceArgs& a) {
    require_dir(a.scene_dir, "scene directory");
    const auto method = evaluation::parse_method(a.method);
    const auto scene = evaluation::read_scene_dir(a.scene_dir);
    affordance::BaselineOptions opts;
    opts.resolution = a.resolution;
    opts.rotations = a.rotations;
    const auto result =
        method == evaluation::Method::baseline
            ? affordance::run_baselines(scene.frames, scene.empty_frames, scene.bin, opts)
            : affordance::run_learned(scene.frames, scene.empty_frames, scene.bin,
                                      evaluation::read_learned_maps(a.scene_dir, scene, opts), opts);

    fs::create_directories(a.out);
    // Per-view suction maps hold each cloud point's affordance at its source pixel.
    for (std::size_t v = 0; v < scene.frames.size(); ++v) {
        affordance::AffordanceMap m;
        m.kind = affordance::MapKind::suction;
        m.values = Grid<float>(scene.frames[v].depth.rows(), scene.frames[v].depth.cols(), 0.0f);
        for (std::size_t i = 0; i < result.cloud.size(); ++i) {
            const auto& px = result.cloud.source_pixels[i];
            if (px.frame != v) continue;
            m.values(static_cast<std::size_t>(px.row), static_cast<std::size_t>(px.col)) =
                static_cast<float>(result.suction[i]);
        }
        char name[32];
        std::snprintf(name, sizeof name, "%03zu.suction.affd", v);
        affordance::save_affordance_map(fs::path(a.out) / name, m);
    }
    for (std::size_t k = 0; k < result.grasp_maps.size(); ++k) {
        char name[32];
        std::snprintf(name, sizeof name, "grasp_%02zu.affd", k);
        affordance::save_affordance_map(fs::path(a.out) / name, result.grasp_maps[k]);
    }
    write_json(fs::path(a.out) / "proposals.json", proposals_json(result));
    std::printf("%zu suction and %zu grasp proposals written to %s\n", result.suction_proposals.size(),
                result.grasp_proposals.size(), a.out.c_str());
    return kOk;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateArgs {
    std::string dataset_root;
    std::string method = "baseline";
    std::string split = "test";
    std::string out = "table.json";
    double resolution = 0.002;
};

int cmd_evaluate(const EvaluateArgs& a) {
    require_dir(a.dataset_root, "dataset directory");
    const auto method = evaluation::parse_method(a.method);
    const auto ds = evaluation::load_label_dataset(a.dataset_root, a.resolution);
    std::vector<const evaluation::LabeledScene*> scenes;
    if (a.split == "test") scenes = ds.test();
    else if (a.split == "train") scenes = ds.train();
    else for (const auto& s : ds.scenes) scenes.push_back(&s);
    if (scenes.empty()) throw UsageError("no scenes in the " + a.split + " split of " + a.dataset_root);

    affordance::BaselineOptions opts;
    opts.resolution = a.resolution;
    evaluation::PrecisionTable table;
    nlohmann::json names = nlohmann::json::array();
    for (const auto* s : scenes) {
        table += evaluation::evaluate_scene(*s, method, opts);
        names.push_back(s->name);
    }
    auto j = table.to_json();
    j["method"] = a.method;
    j["split"] = a.split;
    j["scenes"] = names;
    write_json(a.out, j);

    std::printf("%-10s", (a.method + " (" + std::to_string(scenes.size()) + " scenes)").c_str());
    std::printf("\n%-10s", "");
    for (const auto s : evaluation::kSlices) std::printf("%8s", evaluation::slice_name(s).c_str());
    std::printf("\n%-10s", "suction");
    for (const auto& p : table.suction) std::printf("%8s", percent(p.value()).c_str());
    std::printf("\n%-10s", "grasping");
    for (const auto& p : table.grasp) std::printf("%8s", percent(p.value()).c_str());
    std::printf("\n");
    return kOk;
}

// ---------------------------------------------------------------------------
// stow

struct StowArgs {
    std::size_t objects = 6;
    std::uint64_t seed = 1;
    double time_limit = 900.0;
    double attempt_duration = 20.0;
    std::size_t max_attempts = 0;
    std::string config;
    std::string log = "episode.jsonl";
    std::size_t width = 160;
    std::size_t height = 120;
    planner::PlannerConfig planner;
    double success_a = 10.0;
    double success_b = 0.5;
};

int cmd_stow(StowArgs a, const CLI::App& sub) {
    if (!a.config.empty()) {
        std::ifstream in(a.config);
        if (!in) throw UsageError("config file not found: " + a.config);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(a.config + ": " + e.what());
        }
        // Explicit flags override the file.
        const auto file = planner::PlannerConfig::from_json(j);
        const auto given = [&](const char* flag) { return sub.count(flag) > 0; };
        const char* codes[] = {"--gamma-sd", "--gamma-ss", "--gamma-gd", "--gamma-fg"};
        for (std::size_t i = 0; i < 4; ++i)
            if (!given(codes[i])) a.planner.gamma[i] = file.gamma[i];
        if (!given("--suction-first-window")) a.planner.suction_first_window = file.suction_first_window;
        if (!given("--suppression-radius")) a.planner.suppression_radius = file.suppression_radius;
        if (!given("--speed-pick-spacing")) a.planner.speed_pick_spacing = file.speed_pick_spacing;
        if (!given("--failure-window")) a.planner.failure_window = file.failure_window;
    }
    a.planner.validate();
    if (a.objects == 0) throw UsageError("--objects must be positive");

    const auto bin = evaluation::synthetic_bin();
    Rng rng(a.seed);
    synthetic::ClutterParams clutter;
    clutter.min_objects = clutter.max_objects = a.objects;
    auto scene = synthetic::random_bin_scene(bin, rng, clutter);
    if (scene.boxes.size() < a.objects)
        std::fprintf(stderr, "note: only %zu of %zu objects fit in the bin\n", scene.boxes.size(), a.objects);
    planner::SimulatedBin sim(bin, scene.boxes);
    planner::BaselineProposalSource source({}, a.width, a.height);
    planner::EpisodeConfig ep;
    ep.time_limit = a.time_limit;
    ep.attempt_duration = a.attempt_duration;
    ep.max_attempts = a.max_attempts;
    ep.seed = a.seed;
    const auto log = planner::run_stow_episode(sim, source, a.planner, planner::logistic_success(a.success_a, a.success_b), ep);
    write_text(a.log, log.to_jsonl());

    std::size_t suction = 0, suction_ok = 0, grasp = 0, grasp_ok = 0;
    for (const auto& at : log.attempts) {
        if (affordance::is_suction(at.record.primitive)) {
            ++suction;
            suction_ok += at.record.success;
        } else {
            ++grasp;
            grasp_ok += at.record.success;
        }
    }
    const auto rate = [](std::size_t ok, std::size_t n) {
        return n ? percent(static_cast<double>(ok) / static_cast<double>(n)) + "%" : std::string("-");
    };
    std::printf("picked %zu of %zu objects in %zu attempts (%s)\n", log.picked, scene.boxes.size(), log.attempts.size(),
                log.end_reason.c_str());
    std::printf("%s pick success with suction (%zu/%zu), %s pick success with grasping (%zu/%zu)\n",
                rate(suction_ok, suction).c_str(), suction_ok, suction, rate(grasp_ok, grasp).c_str(), grasp_ok, grasp);
    return kOk;
}

// ---------------------------------------------------------------------------
// recognize

struct RecognizeArgs {
    std::string features;
    std::string catalog;
    bool train = false;
    bool bench = false;
    std::string out = "recognition";
    std::uint64_t seed = 1;
    std::size_t cases = 200;
    std::size_t train_per_object = 20;
    std::size_t validation = 200;
    recognition::TrainConfig training{.epochs = 3};
};

void print_recognition(const evaluation::RecognitionBenchmark& r) {
    std::printf("k = %.4f\n", r.k_threshold);
    std::printf("%-10s%8s%8s%8s%8s\n", "", "K-vs-N", "Known", "Novel", "Mixed");
    const auto row = [](const char* name, const evaluation::BenchmarkTable& t) {
        std::printf("%-10s%8s%8s%8s%8s\n", name, percent(t.k_vs_n()).c_str(), percent(t.known()).c_str(),
                    percent(t.novel()).c_str(), percent(t.mixed()).c_str());
    };
    row("K-net", r.knet);
    row("N-net", r.nnet);
    row("two-stage", r.two_stage);
}

int cmd_recognize(RecognizeArgs a) {
    if (a.features.empty() != a.catalog.empty()) throw UsageError("--features and --catalog go together");
    if (!a.train && !a.bench) a.train = a.bench = true;
    a.training.seed = a.seed;
    a.training.validate();

    recognition::ProductCatalog catalog;
    std::vector<recognition::TrainingSample> train, validation, pool;
    std::vector<evaluation::BenchmarkCase> cases;
    if (a.features.empty()) {
        const synthetic::FeatureWorld world({}, a.seed);
        catalog = world.catalog();
        Rng train_rng(a.seed * 1000 + 1), val_rng(a.seed * 1000 + 5), case_rng(a.seed * 1000 + 9);
        train = world.training_set(a.train_per_object, train_rng);
        validation = world.validation_set(a.validation, val_rng);
        if (a.bench) cases = evaluation::make_benchmark_cases(world, a.cases, case_rng);
    } else {
        require_dir(a.features, "feature directory");
        require_dir(a.catalog, "catalog directory");
        catalog = recognition::read_catalog(a.catalog);
        const fs::path dir(a.features);
        train = recognition::to_samples(recognition::read_features(dir / "train.feat"));
        validation = recognition::to_samples(recognition::read_features(dir / "validation.feat"));
        if (a.bench) {
            pool = recognition::to_samples(recognition::read_features(dir / "test.feat"));
            Rng case_rng(a.seed * 1000 + 9);
            cases = evaluation::make_benchmark_cases(catalog, pool, a.cases, case_rng);
        }
    }

    const auto r = evaluation::evaluate_recognition(catalog, train, validation, cases, a.training);
    fs::create_directories(a.out);
    recognition::save_model(fs::path(a.out) / "knet.embd", r.knet_model);
    recognition::save_model(fs::path(a.out) / "nnet.embd", r.nnet_model);
    auto j = r.to_json();
    if (!a.bench) {
        j.erase("knet");
        j.erase("nnet");
        j.erase("two_stage");
    }
    j["seed"] = a.seed;
    write_json(fs::path(a.out) / "recognition.json", j);
    if (a.bench) print_recognition(r);
    else std::printf("k = %.4f; models written to %s\n", r.k_threshold, a.out.c_str());
    return kOk;
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
    std::string out;
    std::uint64_t seed = 1;
    evaluation::SyntheticDatasetParams dataset;
    std::size_t train_per_object = 20;
    std::size_t validation = 200;
    std::size_t test = 200;
};

int cmd_synth_dataset(const SynthArgs& a) {
    evaluation::synthesize_label_dataset(a.out, a.dataset, a.seed);
    std::printf("%zu labeled scenes written to %s\n", a.dataset.scenes, a.out.c_str());
    return kOk;
}

int cmd_synth_features(const SynthArgs& a) {
    const synthetic::FeatureWorld world({}, a.seed);
    const fs::path root(a.out);
    recognition::write_catalog(root / "catalog", world.catalog());
    fs::create_directories(root / "features");
    Rng train_rng(a.seed * 1000 + 1), val_rng(a.seed * 1000 + 5), test_rng(a.seed * 1000 + 7);
    const auto save = [&](const char* name, const std::vector<recognition::TrainingSample>& samples) {
        std::vector<recognition::FeatureVector> fv;
        for (const auto& s : samples) fv.push_back({s.object_id, recognition::FeatureSource::observed, s.observed});
        recognition::write_features(root / "features" / name, fv);
    };
    save("train.feat", world.training_set(a.train_per_object, train_rng));
    save("validation.feat", world.validation_set(a.validation, val_rng));
    save("test.feat", world.validation_set(a.test, test_rng));
    std::printf("catalog of %zu objects and features written to %s\n", world.ids().size(), a.out.c_str());
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Pick-and-place perception, planning and evaluation tools"};
    app.require_subcommand(1);

    AffordanceArgs aff;
    auto* affordance_cmd = app.add_subcommand("affordance", "Affordance maps and ranked proposals for one scene");
    affordance_cmd->add_option("scene_dir", aff.scene_dir, "Scene directory")->required();
    affordance_cmd->add_option("--method", aff.method, "baseline or learned")
        ->check(CLI::IsMember({"baseline", "learned"}));
    affordance_cmd->add_option("--out", aff.out, "Output directory")->required();
    affordance_cmd->add_option("--resolution", aff.resolution, "Heightmap resolution (m)")->check(CLI::PositiveNumber);
    affordance_cmd->add_option("--rotations", aff.rotations, "Grasp angles")->check(CLI::Range(1, 64));

    EvaluateArgs ev;
    auto* evaluate_cmd = app.add_subcommand("evaluate", "Precision table on a labeled dataset");
    evaluate_cmd->add_option("dataset_root", ev.dataset_root, "Dataset directory")->required();
    evaluate_cmd->add_option("--method", ev.method, "baseline or learned")->check(CLI::IsMember({"baseline", "learned"}));
    evaluate_cmd->add_option("--split", ev.split, "test, train or all")->check(CLI::IsMember({"test", "train", "all"}));
    evaluate_cmd->add_option("--out", ev.out, "Output table (JSON)");
    evaluate_cmd->add_option("--resolution", ev.resolution, "Heightmap resolution (m)")->check(CLI::PositiveNumber);

    StowArgs st;
    auto* stow_cmd = app.add_subcommand("stow", "Simulated picking episode");
    stow_cmd->add_option("--objects", st.objects, "Objects in the bin");
    stow_cmd->add_option("--seed", st.seed, "Random seed");
    stow_cmd->add_option("--time-limit", st.time_limit, "Episode length (s)")->check(CLI::NonNegativeNumber);
    stow_cmd->add_option("--attempt-duration", st.attempt_duration, "Seconds per attempt")->check(CLI::PositiveNumber);
    stow_cmd->add_option("--max-attempts", st.max_attempts, "0 = unlimited");
    stow_cmd->add_option("--config", st.config, "Planner config (JSON)");
    stow_cmd->add_option("--log", st.log, "Episode log (JSON lines)");
    stow_cmd->add_option("--width", st.width, "Simulated camera width")->check(CLI::Range(16, 4096));
    stow_cmd->add_option("--height", st.height, "Simulated camera height")->check(CLI::Range(16, 4096));
    stow_cmd->add_option("--gamma-sd", st.planner.gamma[0], "Multiplier for suction down");
    stow_cmd->add_option("--gamma-ss", st.planner.gamma[1], "Multiplier for suction side");
    stow_cmd->add_option("--gamma-gd", st.planner.gamma[2], "Multiplier for grasp down");
    stow_cmd->add_option("--gamma-fg", st.planner.gamma[3], "Multiplier for flush grasp");
    stow_cmd->add_option("--suction-first-window", st.planner.suction_first_window, "Seconds of suction preference");
    stow_cmd->add_option("--suppression-radius", st.planner.suppression_radius, "Failed-attempt suppression radius (m)");
    stow_cmd->add_option("--speed-pick-spacing", st.planner.speed_pick_spacing, "Minimum spacing of speed picks (m)");
    stow_cmd->add_option("--failure-window", st.planner.failure_window, "Window for recent failures (s)");
    stow_cmd->add_option("--success-slope", st.success_a, "Logistic success model slope");
    stow_cmd->add_option("--success-midpoint", st.success_b, "Logistic success model midpoint");

    RecognizeArgs rc;
    auto* recognize_cmd = app.add_subcommand("recognize", "Train K-net and N-net and run the 1-vs-20 benchmark");
    recognize_cmd->add_option("--features", rc.features, "Directory with train/validation/test .feat files");
    recognize_cmd->add_option("--catalog", rc.catalog, "Catalog directory");
    recognize_cmd->add_flag("--train", rc.train, "Train and save models");
    recognize_cmd->add_flag("--bench", rc.bench, "Run the benchmark");
    recognize_cmd->add_option("--out", rc.out, "Output directory");
    recognize_cmd->add_option("--seed", rc.seed, "Random seed");
    recognize_cmd->add_option("--cases", rc.cases, "Benchmark cases");
    recognize_cmd->add_option("--train-per-object", rc.train_per_object, "Synthetic observations per known object");
    recognize_cmd->add_option("--validation", rc.validation, "Synthetic observations used to calibrate k");
    recognize_cmd->add_option("--epochs", rc.training.epochs, "Training epochs");
    recognize_cmd->add_option("--lr", rc.training.learning_rate, "Learning rate");
    recognize_cmd->add_option("--momentum", rc.training.momentum, "Momentum");
    recognize_cmd->add_option("--lambda", rc.training.lambda, "Classification loss weight of the K-net");
    recognize_cmd->add_option("--classifier-scale", rc.training.classifier_scale, "Prototype classifier scale");
    bool single_anchor = false;
    recognize_cmd->add_flag("--single-anchor", single_anchor, "Use the first product view only");

    SynthArgs sy;
    auto* synth_cmd = app.add_subcommand("synth", "Generate synthetic inputs");
    synth_cmd->require_subcommand(1);
    auto* synth_dataset = synth_cmd->add_subcommand("dataset", "Labeled bin scenes");
    synth_dataset->add_option("out", sy.out, "Output directory")->required();
    synth_dataset->add_option("--seed", sy.seed, "Random seed");
    synth_dataset->add_option("--scenes", sy.dataset.scenes, "Scene count");
    synth_dataset->add_option("--width", sy.dataset.width, "Image width")->check(CLI::Range(16, 4096));
    synth_dataset->add_option("--height", sy.dataset.height, "Image height")->check(CLI::Range(16, 4096));
    auto* synth_features = synth_cmd->add_subcommand("features", "Recognition catalog and features");
    synth_features->add_option("out", sy.out, "Output directory")->required();
    synth_features->add_option("--seed", sy.seed, "Random seed");
    synth_features->add_option("--train-per-object", sy.train_per_object, "Observations per known object");
    synth_features->add_option("--validation", sy.validation, "Validation observations");
    synth_features->add_option("--test", sy.test, "Test observations");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    try {
        if (affordance_cmd->parsed()) return cmd_affordance(aff);
        if (evaluate_cmd->parsed()) return cmd_evaluate(ev);
        if (stow_cmd->parsed()) return cmd_stow(st, *stow_cmd);
        if (recognize_cmd->parsed()) {
            rc.training.multi_anchor = !single_anchor;
            return cmd_recognize(rc);
        }
        if (synth_dataset->parsed()) return cmd_synth_dataset(sy);
        if (synth_features->parsed()) return cmd_synth_features(sy);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const InvalidArgument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const FormatError& e) {
        std::cerr << "error: malformed input: " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kInternal;
    }
    return kInternal;
}
