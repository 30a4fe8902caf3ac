#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "arcpick/affordance.hpp"
#include "arcpick/heightmap.hpp"
#include "arcpick/random.hpp"
#include "arcpick/synthetic.hpp"
#include "json.hpp"

namespace arcpick::planner {

using affordance::PrimitiveKind;

struct PlannerConfig {
    std::array<double, 4> gamma{1.0, 1.0, 1.0, 1.0};  ///< base multiplier per kind, indexed by PrimitiveKind
    double suction_first_window = 180.0;              ///< seconds during which grasps are scaled by 0.5
    double suppression_radius = 0.02;
    double speed_pick_spacing = 0.03;
    double failure_window = 180.0;

    void validate() const;
    nlohmann::json to_json() const;
    /// Fields absent from j keep their defaults. Throws FormatError on unknown
    /// keys or wrong types and InvalidArgument on invalid values.
    static PlannerConfig from_json(const nlohmann::json& j);
};

struct AttemptRecord {
    double time = 0.0;  ///< seconds since task start
    PrimitiveKind primitive = PrimitiveKind::suction_down;
    Eigen::Vector3d position = Eigen::Vector3d::Zero();
    bool success = false;
    std::uint64_t scene_version = 0;  ///< scene version the attempt was planned against
};

/**
 * @brief Planner memory. Single owner; the planner functions are pure
 * given (proposals, state, config).
 */
struct PlannerState {
    std::vector<AttemptRecord> history;
    double clock = 0.0;
    std::uint64_t scene_version = 0;

    /// Appends and bumps scene_version on success. Throws InvalidArgument when
    /// time goes backwards.
    void record(const AttemptRecord& attempt);
    /// Explicit re-observation; clears suppression.
    void scene_changed() { ++scene_version; }
};

/// One executable proposal of either family, in planner terms.
struct Candidate {
    PrimitiveKind kind = PrimitiveKind::suction_down;
    Eigen::Vector3d position = Eigen::Vector3d::Zero();
    double affordance = 0.0;  ///< after suppression
    double scaled = 0.0;      ///< affordance * effective gamma
    std::size_t index = 0;    ///< position in the originating suction or grasp list
};

/// Failures of this kind with time in (clock - failure_window, clock].
std::size_t recent_failures(const PlannerState& state, const PlannerConfig& cfg, PrimitiveKind kind);

/// cfg.gamma[kind] * suction-first factor * failure factor.
double effective_gamma(const PlannerState& state, const PlannerConfig& cfg, PrimitiveKind kind);

std::vector<Candidate> make_candidates(std::span<const affordance::SuctionProposal> suction,
                                       std::span<const affordance::GraspProposal> grasp);

/// Zeroes candidates within suppression_radius of a same-kind failure in the
/// current scene version. Order is preserved.
std::vector<Candidate> suppress(std::vector<Candidate> candidates, const PlannerState& state, const PlannerConfig& cfg);

/// Suppress, scale, and sort by scaled affordance descending with the
/// (kind, x, y, z, index) tie-break. Candidates with scaled affordance 0 are dropped.
std::vector<Candidate> rank(std::vector<Candidate> candidates, const PlannerState& state, const PlannerConfig& cfg);

std::optional<Candidate> select_action(std::span<const affordance::SuctionProposal> suction,
                                       std::span<const affordance::GraspProposal> grasp, const PlannerState& state,
                                       const PlannerConfig& cfg);

/// Greedy in ranked order, skipping candidates within speed_pick_spacing of a
/// chosen one. Throws InvalidArgument when k == 0.
std::vector<Candidate> speed_pick_batch(std::vector<Candidate> candidates, const PlannerState& state,
                                        const PlannerConfig& cfg, std::size_t k);

// ---------------------------------------------------------------------------
// Simulated executor

/**
 * @brief Bin of synthetic boxes that the simulated robot picks from.
 *
 * Objects are named; a pick removes the object it lands on.
 */
class SimulatedBin {
public:
    SimulatedBin(heightmap::BinGeometry bin, std::vector<synthetic::Box> objects, std::vector<std::string> names = {});

    const heightmap::BinGeometry& bin() const { return bin_; }
    const synthetic::Scene& scene() const { return scene_; }
    const std::vector<std::string>& names() const { return names_; }
    bool empty() const { return scene_.boxes.empty(); }
    std::size_t size() const { return scene_.boxes.size(); }

    /// Object a candidate would act on: suction points within 3 mm of a box
    /// surface, grasp midpoints inside a box footprint (topmost wins).
    std::optional<std::size_t> target_of(const Candidate& c) const;
    void remove(std::size_t index);

private:
    heightmap::BinGeometry bin_;
    synthetic::Scene scene_;
    std::vector<std::string> names_;
};

/// Probability that an attempt on the targeted object succeeds.
using SuccessModel = std::function<double(const Candidate&, const SimulatedBin&, std::size_t target)>;

/// sigma(a * (affordance - b)).
SuccessModel logistic_success(double a = 10.0, double b = 0.5);
SuccessModel constant_success(double p);

struct Proposals {
    std::vector<affordance::SuctionProposal> suction;
    std::vector<affordance::GraspProposal> grasp;
};

/// Produces proposals for the current bin contents.
class ProposalSource {
public:
    virtual ~ProposalSource() = default;
    virtual Proposals propose(const SimulatedBin& bin, const PlannerState& state) = 0;
};

/// Renders the bin from synthetic cameras and runs the heuristic baselines,
/// caching the result per scene version.
class BaselineProposalSource : public ProposalSource {
public:
    explicit BaselineProposalSource(affordance::BaselineOptions options = {}, std::size_t image_width = 320,
                                    std::size_t image_height = 240);
    Proposals propose(const SimulatedBin& bin, const PlannerState& state) override;

private:
    affordance::BaselineOptions options_;
    std::size_t width_, height_;
    std::optional<std::uint64_t> cached_version_;
    Proposals cached_;
};

struct EpisodeConfig {
    double time_limit = 900.0;       ///< seconds
    double attempt_duration = 20.0;  ///< seconds per attempt
    double reobserve_interval = 0.0; ///< force a scene version bump every so often; 0 disables
    std::size_t max_attempts = 0;    ///< 0 = unlimited
    std::uint64_t seed = 0;

    nlohmann::json to_json() const;
};

struct LoggedAttempt {
    AttemptRecord record;
    double affordance = 0.0;
    double scaled = 0.0;
    std::optional<std::string> target;
};

struct EpisodeLog {
    nlohmann::json header;
    std::vector<LoggedAttempt> attempts;
    std::string end_reason;  ///< "empty_bin", "time_limit", "no_proposal", "max_attempts"
    std::size_t picked = 0;

    /// Header line, one line per attempt, then a summary line.
    std::string to_jsonl() const;
};

/**
 * @brief Closed loop: observe, select, sample the outcome, update state and bin.
 *
 * Stops at an empty bin, the time limit, max_attempts, or when nothing is
 * selectable. Deterministic for a fixed seed and deterministic source.
 */
EpisodeLog run_stow_episode(SimulatedBin& bin, ProposalSource& source, const PlannerConfig& cfg,
                            const SuccessModel& success, const EpisodeConfig& episode);

}  // namespace arcpick::planner
