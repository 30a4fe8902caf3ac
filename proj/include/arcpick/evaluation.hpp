#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "arcpick/affordance.hpp"
#include "arcpick/core.hpp"
#include "arcpick/feature_world.hpp"
#include "arcpick/heightmap.hpp"
#include "arcpick/random.hpp"
#include "arcpick/recognition.hpp"
#include "arcpick/rgbd.hpp"
#include "arcpick/synthetic.hpp"
#include "json.hpp"

namespace arcpick::evaluation {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Labels

/// On-disk values of a suction label mask.
enum class SuctionLabel : std::uint8_t { neither = 0, negative = 128, positive = 255 };

/// Per-camera-pixel trinary suction labels, stored as SuctionLabel values.
using SuctionLabelMask = Grid<std::uint8_t>;

/// Throws FormatError when a value is not one of 0, 128, 255.
void validate_suction_mask(const SuctionLabelMask& mask);
void write_suction_mask(const fs::path& path, const SuctionLabelMask& mask);
SuctionLabelMask read_suction_mask(const fs::path& path);

enum class Polarity : std::uint8_t { positive, negative };

/// Grasp label on the heightmap: pixel, gripper angle in [0, pi), polarity.
struct GraspLabel {
    long row = 0;
    long col = 0;
    double angle = 0.0;
    Polarity polarity = Polarity::positive;

    friend bool operator==(const GraspLabel&, const GraspLabel&) = default;
};

/// JSON array of {"row", "col", "angle_rad", "polarity": "positive"|"negative"}.
nlohmann::json grasp_labels_to_json(std::span<const GraspLabel> labels);
/// Throws FormatError on missing fields, bad polarity, or angle outside [0, pi).
/// Labels outside rows x cols are rejected when the shape is given.
std::vector<GraspLabel> grasp_labels_from_json(const nlohmann::json& j, std::size_t rows = 0, std::size_t cols = 0);
void write_grasp_labels(const fs::path& path, std::span<const GraspLabel> labels);
std::vector<GraspLabel> read_grasp_labels(const fs::path& path, std::size_t rows = 0, std::size_t cols = 0);

/**
 * @brief count copies of label, each moved by an integer pixel offset drawn
 * uniformly from those within max_jitter / resolution, clipped to the grid.
 */
std::vector<GraspLabel> jitter_augment(const GraspLabel& label, double max_jitter, double resolution, std::size_t count,
                                       std::size_t rows, std::size_t cols, Rng& rng);

// ---------------------------------------------------------------------------
// Precision at percentile

/// Ranked-proposal slices reported per method.
enum class Slice : std::uint8_t { top1, top1_percent, top5_percent, top10_percent };
inline constexpr std::array<Slice, 4> kSlices{Slice::top1, Slice::top1_percent, Slice::top5_percent,
                                              Slice::top10_percent};
std::string slice_name(Slice s);  ///< "top1", "top1%", "top5%", "top10%"

/// Number of proposals in the slice: 1 for top1, else ceil(p * n); 0 when n == 0.
std::size_t slice_size(Slice s, std::size_t n);

struct Precision {
    std::size_t true_positives = 0;
    std::size_t false_positives = 0;
    std::size_t excluded = 0;

    /// TP / (TP + FP); nullopt when nothing was counted.
    std::optional<double> value() const;
    Precision& operator+=(const Precision& o);
};

/// Suction proposals are judged at their source camera pixel: positive is a
/// TP, negative an FP, neither is excluded. masks are indexed by frame.
Precision suction_precision(std::span<const affordance::SuctionProposal> ranked,
                            std::span<const SuctionLabelMask> masks, Slice slice);

struct GraspMatchRule {
    double max_pixels = 4.0;
    double max_angle = 11.25 * std::numbers::pi / 180.0;
};

/// Angular distance between two gripper angles, modulo pi, in [0, pi/2].
double grasp_angle_distance(double a, double b);

enum class GraspVerdict : std::uint8_t { true_positive, false_positive, excluded };

/// TP when a positive label lies within max_pixels and max_angle; otherwise FP
/// when some negative label does; otherwise excluded.
GraspVerdict judge_grasp(const PixelIndex& pixel, double angle, std::span<const GraspLabel> labels,
                         const GraspMatchRule& rule = {});

Precision grasp_precision(std::span<const affordance::GraspProposal> ranked, std::span<const GraspLabel> labels,
                          Slice slice, const GraspMatchRule& rule = {});

struct PrecisionTable {
    std::array<Precision, 4> suction;
    std::array<Precision, 4> grasp;

    PrecisionTable& operator+=(const PrecisionTable& o);
    /// {"suction": {"top1": value|null, ...}, "grasp": {...}, "counts": {...}}
    nlohmann::json to_json() const;
};

// ---------------------------------------------------------------------------
// Scenes and labeled datasets on disk

/**
 * @brief One bin observation: registered views of the scene and of the empty
 * bin from the same cameras.
 *
 * Directory layout: bin.json, NNN.{color,depth}.png + NNN.meta.json for the
 * scene, and empty/ with the same stems for the empty bin.
 */
struct SceneInput {
    std::vector<rgbd::RgbdFrame> frames;
    std::vector<rgbd::RgbdFrame> empty_frames;
    heightmap::BinGeometry bin;
};

nlohmann::json bin_to_json(const heightmap::BinGeometry& bin);
heightmap::BinGeometry bin_from_json(const nlohmann::json& j);

void write_scene_dir(const fs::path& dir, const SceneInput& scene);
/// Throws InvalidArgument when dir is missing, FormatError on malformed files.
SceneInput read_scene_dir(const fs::path& dir);

/// Learned maps stored beside a scene: NNN.suction.affd per view and
/// grasp_KK.affd per rotation angle.
affordance::LearnedMaps read_learned_maps(const fs::path& dir, const SceneInput& scene,
                                          const affordance::BaselineOptions& options);

/// 64-bit FNV-1a of the bytes of s.
std::uint64_t stable_hash(std::string_view s);

/// Items whose names hash lowest form the test side: round(n / 5) of them.
/// Returns true for test items, in input order.
std::vector<bool> split_test(std::span<const std::string> names);

/**
 * @brief Labeled scene: root/<name>/ holds a scene directory plus
 * NNN.suction.png per view and grasp_labels.json on the heightmap grid.
 */
struct LabeledScene {
    std::string name;
    fs::path dir;
    SceneInput scene;
    std::vector<SuctionLabelMask> suction_masks;
    std::vector<GraspLabel> grasp_labels;
    bool test = false;
};

struct LabelDataset {
    std::vector<LabeledScene> scenes;  ///< sorted by name

    std::vector<const LabeledScene*> train() const;
    std::vector<const LabeledScene*> test() const;
};

/// Every subdirectory of root is a scene. Throws InvalidArgument when root is
/// missing and FormatError on missing or corrupt files.
LabelDataset load_label_dataset(const fs::path& root, double resolution = 0.002);

void write_labeled_scene(const fs::path& dir, const SceneInput& scene, std::span<const SuctionLabelMask> masks,
                         std::span<const GraspLabel> grasp_labels);

/// Analytic suction labels for one rendered view: box face points at least
/// edge_margin from the face boundary are positive, other box surface points
/// negative, everything else (floor, background) neither.
SuctionLabelMask label_suction_view(const synthetic::Scene& scene, const rgbd::RgbdFrame& view,
                                    double edge_margin = 0.01);

/// Labels at each box center: closing across the short side is positive when
/// it fits max_opening, else negative; closing along a side longer than
/// max_opening and closing diagonally (45 degrees off) are negative. Each is
/// jittered into `jitter` extra copies.
std::vector<GraspLabel> label_grasps(const synthetic::Scene& scene, const heightmap::BinGeometry& bin,
                                     double resolution, double max_opening, std::size_t jitter, Rng& rng);

struct SyntheticDatasetParams {
    std::size_t scenes = 10;
    std::size_t width = 320;
    std::size_t height = 240;
    double resolution = 0.002;
    std::size_t jitter = 4;
};

/// Writes a labeled dataset of random bin scenes under root.
void synthesize_label_dataset(const fs::path& root, const SyntheticDatasetParams& params, std::uint64_t seed);

/// The fixed bin used by the synthetic generators.
heightmap::BinGeometry synthetic_bin();

enum class Method : std::uint8_t { baseline, learned };
Method parse_method(std::string_view name);

/// Runs the method on one labeled scene and scores every slice.
PrecisionTable evaluate_scene(const LabeledScene& item, Method method, const affordance::BaselineOptions& options = {});

// ---------------------------------------------------------------------------
// 1-vs-20 recognition benchmark

/// One observation and 20 candidate objects, 10 known and 10 novel.
struct BenchmarkCase {
    std::vector<std::string> candidates;
    Eigen::VectorXd observed;
    std::string ground_truth;
    bool ground_truth_known = false;

    /// Throws InvalidArgument unless there are 20 distinct candidates, 10 of
    /// them known in the catalog, and the ground truth is among them.
    void validate(const recognition::ProductCatalog& catalog) const;
};

/// Draws 10 known and 10 novel candidates, a uniformly chosen ground truth and
/// one observation of it.
std::vector<BenchmarkCase> make_benchmark_cases(const synthetic::FeatureWorld& world, std::size_t count, Rng& rng);

/// Cases from recorded observations: each picks a pool observation, then fills
/// the candidates with 10 known and 10 novel catalog objects including it.
std::vector<BenchmarkCase> make_benchmark_cases(const recognition::ProductCatalog& catalog,
                                                std::span<const recognition::TrainingSample> pool, std::size_t count,
                                                Rng& rng);

struct PipelineAnswer {
    std::string top1;
    std::optional<recognition::Verdict> stage;  ///< recollection output, when the pipeline has one
};

using Pipeline = std::function<PipelineAnswer(const BenchmarkCase&)>;

struct BenchmarkTable {
    std::size_t cases = 0;
    std::size_t known_cases = 0;
    std::size_t known_correct = 0;
    std::size_t novel_correct = 0;
    std::size_t stage_cases = 0;
    std::size_t stage_correct = 0;

    double known() const;
    double novel() const;
    double mixed() const;
    std::optional<double> k_vs_n() const;
    nlohmann::json to_json() const;
};

BenchmarkTable run_1v20_benchmark(std::span<const BenchmarkCase> cases, const Pipeline& pipeline);

Pipeline oracle_pipeline();
Pipeline random_pipeline(std::uint64_t seed);
Pipeline single_model_pipeline(const recognition::EmbeddingModel& model, const recognition::ProductCatalog& catalog);
Pipeline two_stage_pipeline(const recognition::RecognitionConfig& config, const recognition::ProductCatalog& catalog);

/// Settings of the synthetic K-net / N-net comparison.
struct RecognitionBenchmarkConfig {
    synthetic::FeatureWorldParams world;
    std::uint64_t seed = 1;
    std::size_t train_per_object = 20;
    std::size_t validation = 200;  ///< observations used to calibrate k
    std::size_t cases = 200;
    recognition::TrainConfig training{.epochs = 3};
};

struct RecognitionBenchmark {
    double k_threshold = 0.0;
    BenchmarkTable knet, nnet, two_stage;
    recognition::TrainingReport knet_report, nnet_report;
    recognition::EmbeddingModel knet_model, nnet_model;

    nlohmann::json to_json() const;
};

/// Trains both networks, calibrates k on validation and scores the three
/// pipelines on cases. Training seeds come from training.seed.
RecognitionBenchmark evaluate_recognition(const recognition::ProductCatalog& catalog,
                                          std::span<const recognition::TrainingSample> train,
                                          std::span<const recognition::TrainingSample> validation,
                                          std::span<const BenchmarkCase> cases, const recognition::TrainConfig& training);

/// World, training, calibration and the three pipelines, all from config.seed.
RecognitionBenchmark run_recognition_benchmark(const RecognitionBenchmarkConfig& config);

}  // namespace arcpick::evaluation
