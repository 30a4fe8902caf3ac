#pragma once

// Cheap adversarial proposal stream for long planner episodes.

#include <cmath>
#include <string>
#include <vector>

#include "arcpick/planner.hpp"
#include "arcpick/random.hpp"

namespace arcpick::testing {

/// Fresh random proposals every step; about half are placed close to earlier
/// failures so suppression is exercised constantly.
class FuzzProposalSource : public planner::ProposalSource {
public:
    explicit FuzzProposalSource(std::uint64_t seed, std::size_t per_step = 16) : rng_(seed), per_step_(per_step) {}

    planner::Proposals propose(const planner::SimulatedBin& bin, const planner::PlannerState& state) override {
        planner::Proposals out;
        const auto& g = bin.bin();
        std::vector<const planner::AttemptRecord*> failures;
        for (const auto& a : state.history)
            if (!a.success) failures.push_back(&a);
        for (std::size_t i = 0; i < per_step_; ++i) {
            Eigen::Vector3d p;
            auto kind = static_cast<affordance::PrimitiveKind>(rng_.index(4));
            if (!failures.empty() && rng_.bernoulli(0.5)) {
                const auto* f = failures[rng_.index(std::min<std::size_t>(failures.size(), 8)) + failures.size() -
                                         std::min<std::size_t>(failures.size(), 8)];
                const double r = rng_.uniform(0.0, 0.04), th = rng_.uniform(0.0, 2.0 * std::numbers::pi);
                p = f->position + Eigen::Vector3d(r * std::cos(th), r * std::sin(th), 0.0);
                if (rng_.bernoulli(0.7)) kind = f->primitive;
            } else {
                p = g.origin + Eigen::Vector3d(rng_.uniform(0.0, g.x_extent), rng_.uniform(0.0, g.y_extent),
                                               rng_.uniform(0.0, 0.05));
            }
            const double aff = rng_.uniform(0.05, 1.0);
            if (affordance::is_suction(kind)) {
                affordance::SuctionProposal s;
                s.point = p;
                s.normal = Eigen::Vector3d::UnitZ();
                s.affordance = aff;
                s.primitive = kind;
                out.suction.push_back(s);
            } else {
                affordance::GraspProposal gp;
                gp.midpoint = p;
                gp.width = 0.05;
                gp.affordance = aff;
                gp.primitive = kind;
                out.grasp.push_back(gp);
            }
        }
        return out;
    }

private:
    Rng rng_;
    std::size_t per_step_;
};

/// Grid of small boxes covering part of the bin floor.
inline planner::SimulatedBin fuzz_bin(const heightmap::BinGeometry& bin) {
    std::vector<synthetic::Box> boxes;
    for (int i = 0; i < 10; ++i)
        for (int j = 0; j < 7; ++j)
            boxes.push_back(synthetic::resting_box(bin.origin.x() + 0.02 + 0.03 * i, bin.origin.y() + 0.02 + 0.03 * j,
                                                   0.02, 0.02, 0.02, 0.0, bin.origin.z()));
    return planner::SimulatedBin(bin, std::move(boxes));
}

/// Attempts that repeat a same-kind failure within radius in the same scene version.
inline std::size_t suppression_violations(const std::vector<planner::LoggedAttempt>& attempts, double radius) {
    std::size_t violations = 0;
    for (std::size_t j = 0; j < attempts.size(); ++j)
        for (std::size_t i = 0; i < j; ++i) {
            const auto& f = attempts[i].record;
            const auto& a = attempts[j].record;
            if (f.success || f.scene_version != a.scene_version || f.primitive != a.primitive) continue;
            if ((f.position - a.position).norm() <= radius) ++violations;
        }
    return violations;
}

}  // namespace arcpick::testing
