#include "hrn/loss.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace hrn::train {

void LossConfig::validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("LossConfig: alpha in [0,1]");
    if (!(beta >= 0.0)) throw std::invalid_argument("LossConfig: beta >= 0");
}

const LevelStats& NormStats::at(int level) const {
    if (level < 0 || level >= static_cast<int>(levels.size()) || levels[level].count == 0)
        throw std::logic_error("NormStats: missing statistics for level " +
                               std::to_string(level));
    return levels[level];
}

namespace {

// Ground-truth world/local deltas for all hierarchy nodes of one transition.
void truth_deltas(const HierarchyGraph& h, std::span<const Vec3> cur, std::span<const Vec3> next,
                  std::vector<Vec3>& world, std::vector<Vec3>& local,
                  std::vector<Vec3>& node_cur) {
    std::vector<Vec3> vel_dummy(h.leaf_count);
    std::vector<Vec3> node_next, tmp;
    aggregate_states(h, cur, vel_dummy, node_cur, tmp);
    aggregate_states(h, next, vel_dummy, node_next, tmp);
    const int M = h.node_count();
    world.resize(M);
    local.resize(M);
    for (int i = 0; i < M; ++i) world[i] = node_next[i] - node_cur[i];
    for (int i = 0; i < M; ++i)
        local[i] = h.parent[i] >= 0 ? world[i] - world[h.parent[i]] : world[i];
}

}  // namespace

NormStats fit_norm_stats(std::span<const sim::Trajectory* const> trajectories) {
    if (trajectories.empty()) throw std::invalid_argument("fit_norm_stats: no trajectories");
    int max_level = 0;
    for (const sim::Trajectory* tr : trajectories)
        for (int lv : tr->header.hierarchy.level) max_level = std::max(max_level, lv);
    std::vector<std::array<double, 3>> sum(max_level + 1, {0, 0, 0});
    std::vector<std::array<double, 3>> sumsq(max_level + 1, {0, 0, 0});
    std::vector<std::int64_t> count(max_level + 1, 0);

    std::vector<Vec3> world, local, node_cur;
    for (const sim::Trajectory* tr : trajectories) {
        const HierarchyGraph& h = tr->header.hierarchy;
        for (int t = 0; t + 1 < tr->frame_count(); ++t) {
            const bool reset = std::find(tr->header.resets.begin(), tr->header.resets.end(),
                                         t + 1) != tr->header.resets.end();
            if (reset) continue;
            truth_deltas(h, tr->frames[t].pos, tr->frames[t + 1].pos, world, local, node_cur);
            for (int i = 0; i < h.node_count(); ++i) {
                const int lv = h.level[i];
                for (int c = 0; c < 3; ++c) {
                    sum[lv][c] += local[i][c];
                    sumsq[lv][c] += local[i][c] * local[i][c];
                }
                count[lv]++;
            }
        }
    }
    NormStats stats;
    stats.levels.resize(max_level + 1);
    for (int lv = 0; lv <= max_level; ++lv) {
        LevelStats& ls = stats.levels[lv];
        ls.count = count[lv];
        if (ls.count == 0) continue;
        const double inv = 1.0 / static_cast<double>(ls.count);
        double m[3], s[3];
        for (int c = 0; c < 3; ++c) {
            m[c] = sum[lv][c] * inv;
            const double var = std::max(0.0, sumsq[lv][c] * inv - m[c] * m[c]);
            s[c] = std::max(std::sqrt(var), NormStats::kStdFloor);
        }
        ls.mean = {m[0], m[1], m[2]};
        ls.std_dev = {s[0], s[1], s[2]};
    }
    return stats;
}

LossTargets make_loss_targets(const HierarchyGraph& h, std::span<const Vec3> leaf_pos_cur,
                              std::span<const Vec3> leaf_pos_next, const NormStats& stats) {
    const int M = h.node_count();
    LossTargets t;
    t.node_count = M;
    std::vector<Vec3> world, local, node_cur;
    truth_deltas(h, leaf_pos_cur, leaf_pos_next, world, local, node_cur);
    std::vector<Vec3> node_next, tmp;
    std::vector<Vec3> vel_dummy(h.leaf_count);
    aggregate_states(h, leaf_pos_next, vel_dummy, node_next, tmp);

    t.local_truth = Tensor2(M, 3);
    t.world_truth = Tensor2(M, 3);
    t.node_pos_cur = Tensor2(M, 3);
    t.inv_sigma = Tensor2(M, 3);
    for (int i = 0; i < M; ++i) {
        const LevelStats& ls = stats.at(h.level[i]);
        for (int c = 0; c < 3; ++c) {
            t.local_truth.at(i, c) = local[i][c];
            t.world_truth.at(i, c) = world[i][c];
            t.node_pos_cur.at(i, c) = node_cur[i][c];
            t.inv_sigma.at(i, c) = 1.0 / ls.std_dev[c];
        }
    }
    for (const Relation& r : h.kinship) {
        if (r.kind != RelKind::WithinSibling) continue;
        t.sib_send.push_back(r.sender);
        t.sib_recv.push_back(r.receiver);
    }
    t.dist_next = Tensor2(static_cast<int>(t.sib_send.size()), 1);
    for (size_t p = 0; p < t.sib_send.size(); ++p)
        t.dist_next.d[p] = (node_next[t.sib_send[p]] - node_next[t.sib_recv[p]]).norm();
    return t;
}

int build_loss_node(ad::Tape& tape, int local_node, int world_node, const LossTargets& targets,
                    const LossConfig& cfg) {
    cfg.validate();
    const int M = targets.node_count;
    const int local_diff = tape.sub(local_node, tape.input(targets.local_truth));
    const int local_norm = tape.mul(local_diff, tape.input(targets.inv_sigma));
    const int local_term =
        tape.scale(tape.sum_all(tape.mul(local_norm, local_norm)), 1.0 / M);

    const int world_diff = tape.sub(world_node, tape.input(targets.world_truth));
    const int global_term =
        tape.scale(tape.sum_all(tape.mul(world_diff, world_diff)), 1.0 / M);

    int total = tape.add(tape.scale(local_term, cfg.alpha),
                         tape.scale(global_term, cfg.alpha * cfg.beta));

    const int pairs = static_cast<int>(targets.sib_send.size());
    if (pairs > 0) {
        const int pos_next = tape.add(world_node, tape.input(targets.node_pos_cur));
        const auto send_plan = ad::RowMap::build(targets.sib_send, M);
        const auto recv_plan = ad::RowMap::build(targets.sib_recv, M);
        const int gap = tape.sub(tape.gather_rows(pos_next, send_plan),
                                 tape.gather_rows(pos_next, recv_plan));
        const int dist = tape.row_norm(gap);
        const int dist_diff = tape.sub(dist, tape.input(targets.dist_next));
        const int preserve_term =
            tape.scale(tape.sum_all(tape.mul(dist_diff, dist_diff)), 1.0 / pairs);
        total = tape.add(total, tape.scale(preserve_term, 1.0 - cfg.alpha));
    }
    return total;
}

LossBreakdown compute_loss(std::span<const Vec3> pred_local, const HierarchyGraph& h,
                           std::span<const Vec3> leaf_pos_cur, std::span<const Vec3> leaf_pos_next,
                           const NormStats& stats, const LossConfig& cfg,
                           std::vector<Vec3>* grad_local) {
    cfg.validate();
    const int M = h.node_count();
    if (static_cast<int>(pred_local.size()) != M)
        throw std::invalid_argument("compute_loss: local delta count mismatch");
    const LossTargets targets = make_loss_targets(h, leaf_pos_cur, leaf_pos_next, stats);

    ad::Tape tape;
    Tensor2 local(M, 3);
    for (int i = 0; i < M; ++i)
        for (int c = 0; c < 3; ++c) local.at(i, c) = pred_local[i][c];
    const int local_node = tape.input(std::move(local), /*needs_grad=*/true);
    // world deltas from locals by the ancestor sum
    std::vector<int> cs, cr;
    for (int i = 0; i < M; ++i) {
        std::vector<int> grp{i};
        for (int a = h.parent[i]; a >= 0; a = h.parent[a]) grp.push_back(a);
        std::sort(grp.begin(), grp.end());
        for (int j : grp) {
            cs.push_back(j);
            cr.push_back(i);
        }
    }
    const int world_node = tape.segment_sum(tape.gather_rows(local_node, ad::RowMap::build(cs, M)),
                                            ad::RowMap::build(cr, M));
    const int total = build_loss_node(tape, local_node, world_node, targets, cfg);

    LossBreakdown out;
    out.total = tape.value(total).d[0];
    {
        // unweighted terms recomputed for reporting
        ad::Tape t2;
        Tensor2 l2(M, 3);
        for (int i = 0; i < M; ++i)
            for (int c = 0; c < 3; ++c) l2.at(i, c) = pred_local[i][c];
        const int ln = t2.input(std::move(l2));
        const int wn = t2.segment_sum(t2.gather_rows(ln, ad::RowMap::build(cs, M)),
                                      ad::RowMap::build(cr, M));
        const int ldiff = t2.sub(ln, t2.input(targets.local_truth));
        const int lnorm = t2.mul(ldiff, t2.input(targets.inv_sigma));
        out.local_term = t2.value(t2.scale(t2.sum_all(t2.mul(lnorm, lnorm)), 1.0 / M)).d[0];
        const int wdiff = t2.sub(wn, t2.input(targets.world_truth));
        out.global_term = t2.value(t2.scale(t2.sum_all(t2.mul(wdiff, wdiff)), 1.0 / M)).d[0];
        if (!targets.sib_send.empty()) {
            const int pn = t2.add(wn, t2.input(targets.node_pos_cur));
            const auto sp = ad::RowMap::build(targets.sib_send, M);
            const auto rp = ad::RowMap::build(targets.sib_recv, M);
            const int gap = t2.sub(t2.gather_rows(pn, sp), t2.gather_rows(pn, rp));
            const int dd = t2.sub(t2.row_norm(gap), t2.input(targets.dist_next));
            out.preserve_term =
                t2.value(t2.scale(t2.sum_all(t2.mul(dd, dd)),
                                  1.0 / static_cast<double>(targets.sib_send.size())))
                    .d[0];
        }
    }
    if (grad_local) {
        tape.backward(total);
        const Tensor2& g = tape.grad(local_node);
        grad_local->resize(M);
        for (int i = 0; i < M; ++i) (*grad_local)[i] = {g.at(i, 0), g.at(i, 1), g.at(i, 2)};
    }
    return out;
}

}  // namespace hrn::train
