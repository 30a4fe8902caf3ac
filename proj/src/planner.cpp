#include "arcpick/planner.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <sstream>
#include <tuple>

namespace arcpick::planner {

namespace {

std::size_t kind_index(PrimitiveKind k) { return static_cast<std::size_t>(k); }

bool ranked_before(const Candidate& a, const Candidate& b) {
    if (a.scaled != b.scaled) return a.scaled > b.scaled;
    if (a.kind != b.kind) return kind_index(a.kind) < kind_index(b.kind);
    const auto pa = std::make_tuple(a.position.x(), a.position.y(), a.position.z(), a.index);
    const auto pb = std::make_tuple(b.position.x(), b.position.y(), b.position.z(), b.index);
    return pa < pb;
}

}  // namespace

void PlannerConfig::validate() const {
    for (double g : gamma)
        if (!(g >= 0.0 && g <= 1.0)) throw InvalidArgument("gamma multipliers must be in [0, 1]");
    if (!(suppression_radius > 0.0) || !(speed_pick_spacing > 0.0))
        throw InvalidArgument("suppression radius and speed-pick spacing must be positive");
    if (!(suction_first_window >= 0.0) || !(failure_window >= 0.0)) throw InvalidArgument("windows must be non-negative");
}

nlohmann::json PlannerConfig::to_json() const {
    nlohmann::json g;
    for (std::size_t i = 0; i < gamma.size(); ++i)
        g[std::string(affordance::to_string(static_cast<PrimitiveKind>(i)))] = gamma[i];
    return {{"gamma", g},
            {"suction_first_window", suction_first_window},
            {"suppression_radius", suppression_radius},
            {"speed_pick_spacing", speed_pick_spacing},
            {"failure_window", failure_window}};
}

PlannerConfig PlannerConfig::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw FormatError("planner config must be a JSON object");
    PlannerConfig cfg;
    const auto number = [](const nlohmann::json& v, const std::string& key) {
        if (!v.is_number()) throw FormatError("planner config: '" + key + "' must be a number");
        return v.get<double>();
    };
    for (const auto& [key, value] : j.items()) {
        if (key == "gamma") {
            if (!value.is_object()) throw FormatError("planner config: 'gamma' must be an object");
            for (const auto& [code, g] : value.items()) {
                PrimitiveKind kind;
                try {
                    kind = affordance::parse_primitive(code);
                } catch (const Error&) {
                    throw FormatError("planner config: unknown primitive '" + code + "' in gamma");
                }
                cfg.gamma[static_cast<std::size_t>(kind)] = number(g, "gamma." + code);
            }
        } else if (key == "suction_first_window") {
            cfg.suction_first_window = number(value, key);
        } else if (key == "suppression_radius") {
            cfg.suppression_radius = number(value, key);
        } else if (key == "speed_pick_spacing") {
            cfg.speed_pick_spacing = number(value, key);
        } else if (key == "failure_window") {
            cfg.failure_window = number(value, key);
        } else {
            throw FormatError("planner config: unknown key '" + key + "'");
        }
    }
    cfg.validate();
    return cfg;
}

void PlannerState::record(const AttemptRecord& attempt) {
    if (attempt.time < 0.0) throw InvalidArgument("attempt time must be non-negative");
    if (!history.empty() && attempt.time < history.back().time)
        throw InvalidArgument("attempt times must be nondecreasing");
    history.push_back(attempt);
    clock = std::max(clock, attempt.time);
    if (attempt.success) ++scene_version;
}

std::size_t recent_failures(const PlannerState& state, const PlannerConfig& cfg, PrimitiveKind kind) {
    std::size_t n = 0;
    for (const auto& a : state.history)
        if (!a.success && a.primitive == kind && a.time <= state.clock && a.time > state.clock - cfg.failure_window) ++n;
    return n;
}

double effective_gamma(const PlannerState& state, const PlannerConfig& cfg, PrimitiveKind kind) {
    const bool grasp = !affordance::is_suction(kind);
    const double suction_first = grasp && state.clock < cfg.suction_first_window ? 0.5 : 1.0;
    const std::size_t failures = recent_failures(state, cfg, kind);
    const double failure = failures < 2 ? 1.0 : failures <= 3 ? 0.5 : 0.25;
    return cfg.gamma[kind_index(kind)] * suction_first * failure;
}

std::vector<Candidate> make_candidates(std::span<const affordance::SuctionProposal> suction,
                                       std::span<const affordance::GraspProposal> grasp) {
    std::vector<Candidate> out;
    out.reserve(suction.size() + grasp.size());
    for (std::size_t i = 0; i < suction.size(); ++i)
        out.push_back({suction[i].primitive, suction[i].point, suction[i].affordance, 0.0, i});
    for (std::size_t i = 0; i < grasp.size(); ++i)
        out.push_back({grasp[i].primitive, grasp[i].midpoint, grasp[i].affordance, 0.0, i});
    return out;
}

std::vector<Candidate> suppress(std::vector<Candidate> candidates, const PlannerState& state, const PlannerConfig& cfg) {
    const double r2 = cfg.suppression_radius * cfg.suppression_radius;
    for (const auto& a : state.history) {
        if (a.success || a.scene_version != state.scene_version) continue;
        for (auto& c : candidates)
            if (c.kind == a.primitive && (c.position - a.position).squaredNorm() <= r2) c.affordance = 0.0;
    }
    return candidates;
}

std::vector<Candidate> rank(std::vector<Candidate> candidates, const PlannerState& state, const PlannerConfig& cfg) {
    candidates = suppress(std::move(candidates), state, cfg);
    std::array<double, 4> gammas{};
    for (std::size_t k = 0; k < gammas.size(); ++k) gammas[k] = effective_gamma(state, cfg, static_cast<PrimitiveKind>(k));
    std::vector<Candidate> out;
    out.reserve(candidates.size());
    for (auto& c : candidates) {
        c.scaled = c.affordance * gammas[kind_index(c.kind)];
        if (c.scaled > 0.0) out.push_back(c);
    }
    std::sort(out.begin(), out.end(), ranked_before);
    return out;
}

std::optional<Candidate> select_action(std::span<const affordance::SuctionProposal> suction,
                                       std::span<const affordance::GraspProposal> grasp, const PlannerState& state,
                                       const PlannerConfig& cfg) {
    auto ranked = rank(make_candidates(suction, grasp), state, cfg);
    if (ranked.empty()) return std::nullopt;
    return ranked.front();
}

std::vector<Candidate> speed_pick_batch(std::vector<Candidate> candidates, const PlannerState& state,
                                        const PlannerConfig& cfg, std::size_t k) {
    if (k == 0) throw InvalidArgument("speed_pick_batch: k must be at least 1");
    const auto ranked = rank(std::move(candidates), state, cfg);
    const double s2 = cfg.speed_pick_spacing * cfg.speed_pick_spacing;
    std::vector<Candidate> batch;
    for (const auto& c : ranked) {
        if (batch.size() == k) break;
        const bool clear = std::none_of(batch.begin(), batch.end(), [&](const Candidate& b) {
            return (b.position - c.position).squaredNorm() < s2;
        });
        if (clear) batch.push_back(c);
    }
    return batch;
}

SimulatedBin::SimulatedBin(heightmap::BinGeometry bin, std::vector<synthetic::Box> objects, std::vector<std::string> names)
    : bin_(std::move(bin)), names_(std::move(names)) {
    bin_.validate();
    scene_.floor_z = bin_.origin.z();
    scene_.boxes = std::move(objects);
    if (names_.empty())
        for (std::size_t i = 0; i < scene_.boxes.size(); ++i) names_.push_back("object_" + std::to_string(i));
    if (names_.size() != scene_.boxes.size()) throw InvalidArgument("SimulatedBin: one name per object");
}

std::optional<std::size_t> SimulatedBin::target_of(const Candidate& c) const {
    std::optional<std::size_t> best;
    if (affordance::is_suction(c.kind)) {
        double best_d = 0.003;
        for (std::size_t i = 0; i < scene_.boxes.size(); ++i) {
            const auto& b = scene_.boxes[i];
            const Eigen::Vector3d l = b.rotation.transpose() * (c.position - b.center);
            const Eigen::Vector3d q = l.cwiseAbs() - b.half_extents;
            // Distance to the box surface, inside or out.
            const double outside = q.cwiseMax(0.0).norm();
            const double d = outside > 0.0 ? outside : -q.maxCoeff();
            if (d <= best_d) {
                best_d = d;
                best = i;
            }
        }
        return best;
    }
    double best_top = -1.0;
    for (std::size_t i = 0; i < scene_.boxes.size(); ++i) {
        const auto& b = scene_.boxes[i];
        const Eigen::Vector3d l = b.rotation.transpose() * (c.position - b.center);
        const double slack = 0.002;
        if (std::abs(l.x()) > b.half_extents.x() + slack || std::abs(l.y()) > b.half_extents.y() + slack) continue;
        const double top = b.center.z() + b.half_extents.z();
        if (top > best_top) {
            best_top = top;
            best = i;
        }
    }
    return best;
}

void SimulatedBin::remove(std::size_t index) {
    if (index >= scene_.boxes.size()) throw InvalidArgument("SimulatedBin::remove: bad index");
    scene_.boxes.erase(scene_.boxes.begin() + static_cast<long>(index));
    names_.erase(names_.begin() + static_cast<long>(index));
}

SuccessModel logistic_success(double a, double b) {
    return [a, b](const Candidate& c, const SimulatedBin&, std::size_t) {
        return 1.0 / (1.0 + std::exp(-a * (c.affordance - b)));
    };
}

SuccessModel constant_success(double p) {
    return [p](const Candidate&, const SimulatedBin&, std::size_t) { return p; };
}

BaselineProposalSource::BaselineProposalSource(affordance::BaselineOptions options, std::size_t image_width,
                                               std::size_t image_height)
    : options_(std::move(options)), width_(image_width), height_(image_height) {}

Proposals BaselineProposalSource::propose(const SimulatedBin& bin, const PlannerState& state) {
    if (cached_version_ && *cached_version_ == state.scene_version) return cached_;
    const auto views = synthetic::bin_cameras(bin.bin(), width_, height_);
    synthetic::Scene empty;
    empty.floor_z = bin.bin().origin.z();
    std::vector<rgbd::RgbdFrame> frames, empty_frames;
    for (const auto& v : views) {
        frames.push_back(bin.scene().render(v.intrinsics, v.pose));
        empty_frames.push_back(empty.render(v.intrinsics, v.pose));
    }
    auto result = affordance::run_baselines(frames, empty_frames, bin.bin(), options_);
    cached_ = {std::move(result.suction_proposals), std::move(result.grasp_proposals)};
    cached_version_ = state.scene_version;
    return cached_;
}

nlohmann::json EpisodeConfig::to_json() const {
    return {{"time_limit", time_limit},
            {"attempt_duration", attempt_duration},
            {"reobserve_interval", reobserve_interval},
            {"max_attempts", max_attempts},
            {"seed", seed}};
}

std::string EpisodeLog::to_jsonl() const {
    std::ostringstream out;
    out << header.dump() << '\n';
    for (const auto& a : attempts) {
        nlohmann::json j = {{"type", "attempt"},
                            {"time", a.record.time},
                            {"primitive", affordance::to_string(a.record.primitive)},
                            {"position", {a.record.position.x(), a.record.position.y(), a.record.position.z()}},
                            {"success", a.record.success},
                            {"scene_version", a.record.scene_version},
                            {"affordance", a.affordance},
                            {"scaled", a.scaled},
                            {"target", a.target ? nlohmann::json(*a.target) : nlohmann::json(nullptr)}};
        out << j.dump() << '\n';
    }
    out << nlohmann::json{{"type", "end"}, {"reason", end_reason}, {"attempts", attempts.size()}, {"picked", picked}}.dump()
        << '\n';
    return out.str();
}

EpisodeLog run_stow_episode(SimulatedBin& bin, ProposalSource& source, const PlannerConfig& cfg,
                            const SuccessModel& success, const EpisodeConfig& episode) {
    cfg.validate();
    if (!(episode.attempt_duration > 0.0)) throw InvalidArgument("attempt_duration must be positive");
    Rng rng(episode.seed);
    PlannerState state;
    EpisodeLog log;
    log.header = {{"type", "header"},
                  {"seed", episode.seed},
                  {"planner", cfg.to_json()},
                  {"episode", episode.to_json()},
                  {"objects", bin.names()}};
    double next_reobserve = episode.reobserve_interval;

    while (true) {
        if (bin.empty()) {
            log.end_reason = "empty_bin";
            break;
        }
        if (state.clock >= episode.time_limit) {
            log.end_reason = "time_limit";
            break;
        }
        if (episode.max_attempts && log.attempts.size() >= episode.max_attempts) {
            log.end_reason = "max_attempts";
            break;
        }
        if (episode.reobserve_interval > 0.0 && state.clock >= next_reobserve) {
            state.scene_changed();
            while (next_reobserve <= state.clock) next_reobserve += episode.reobserve_interval;
        }

        const Proposals proposals = source.propose(bin, state);
        const auto choice = select_action(proposals.suction, proposals.grasp, state, cfg);
        if (!choice) {
            log.end_reason = "no_proposal";
            break;
        }

        LoggedAttempt entry;
        entry.affordance = choice->affordance;
        entry.scaled = choice->scaled;
        const auto target = bin.target_of(*choice);
        bool ok = false;
        if (target) {
            entry.target = bin.names()[*target];
            ok = rng.bernoulli(std::clamp(success(*choice, bin, *target), 0.0, 1.0));
        }
        entry.record = {state.clock, choice->kind, choice->position, ok, state.scene_version};
        state.record(entry.record);
        if (ok) {
            bin.remove(*target);
            ++log.picked;
        }
        log.attempts.push_back(std::move(entry));
        state.clock += episode.attempt_duration;
    }
    return log;
}

}  // namespace arcpick::planner
