#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hrn/graph.hpp"
#include "hrn/model.hpp"
#include "hrn/sim.hpp"
#include "hrn/tape.hpp"

namespace hrn::train {

// Loss = alpha * (local + beta * global) + (1 - alpha) * preserve, each term
// mean-reduced over its element count. The local term is normalized per
// hierarchy level.
struct LossConfig {
    double alpha = 0.5;  // in [0, 1]
    double beta = 1.0;   // >= 0

    void validate() const;
};

struct LevelStats {
    Vec3 mean;
    Vec3 std_dev{1, 1, 1};
    std::int64_t count = 0;
};

struct NormStats {
    static constexpr double kStdFloor = 1e-8;
    std::vector<LevelStats> levels;

    const LevelStats& at(int level) const;  // throws std::logic_error if missing
};

// Mean/std of ground-truth local deltas grouped by node level, pooled over
// every contiguous transition of the given trajectories.
NormStats fit_norm_stats(std::span<const sim::Trajectory* const> trajectories);

// Precomputed truth for one (t -> t+1) transition.
struct LossTargets {
    Tensor2 local_truth;    // M x 3
    Tensor2 world_truth;    // M x 3
    Tensor2 node_pos_cur;   // M x 3, aggregated at t
    Tensor2 inv_sigma;      // M x 3, 1/std(level)
    std::vector<int> sib_send, sib_recv;  // ordered sibling pairs
    Tensor2 dist_next;      // pairs x 1, truth next distances
    int node_count = 0;
};

LossTargets make_loss_targets(const HierarchyGraph& h, std::span<const Vec3> leaf_pos_cur,
                              std::span<const Vec3> leaf_pos_next, const NormStats& stats);

// Appends the three-term loss to the tape; local/world are M x 3 nodes.
int build_loss_node(ad::Tape& tape, int local_node, int world_node, const LossTargets& targets,
                    const LossConfig& cfg);

struct LossBreakdown {
    double total = 0.0;
    double local_term = 0.0;     // before alpha weighting
    double global_term = 0.0;    // before alpha*beta weighting
    double preserve_term = 0.0;  // before (1-alpha) weighting
};

// Standalone loss on a finished prediction. World deltas are re-derived from
// the locals by the ancestor sum; optional gradient w.r.t. the local deltas.
LossBreakdown compute_loss(std::span<const Vec3> pred_local, const HierarchyGraph& h,
                           std::span<const Vec3> leaf_pos_cur, std::span<const Vec3> leaf_pos_next,
                           const NormStats& stats, const LossConfig& cfg,
                           std::vector<Vec3>* grad_local = nullptr);

}  // namespace hrn::train
