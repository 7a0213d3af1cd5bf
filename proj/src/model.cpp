#include "hrn/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "hrn/parallel.hpp"

namespace hrn::model {

std::string to_string(Variant v) {
    switch (v) {
        case Variant::Hrn: return "hrn";
        case Variant::FlatGraph: return "flat-graph";
        case Variant::MlpBaseline: return "mlp-baseline";
    }
    return "?";
}

Variant variant_from_string(const std::string& s) {
    if (s == "hrn") return Variant::Hrn;
    if (s == "flat-graph") return Variant::FlatGraph;
    if (s == "mlp-baseline") return Variant::MlpBaseline;
    throw std::invalid_argument("unknown model variant: " + s);
}

void ModelConfig::validate() const {
    if (history < 1) throw std::invalid_argument("ModelConfig: history >= 1");
    if (effect_dim < 1) throw std::invalid_argument("ModelConfig: effect_dim >= 1");
    if (material_dim < 1) throw std::invalid_argument("ModelConfig: material_dim >= 1");
    if (!(dt > 0.0)) throw std::invalid_argument("ModelConfig: dt > 0");
    if (variant == Variant::MlpBaseline && baseline_particles < 1)
        throw std::invalid_argument("ModelConfig: baseline needs a fixed particle count");
}

namespace {

std::int64_t grid_key(int cx, int cy, int cz) {
    const std::int64_t bias = 1 << 20;
    return (((cx + bias) & 0x1FFFFF) << 42) |
           ((static_cast<std::int64_t>(cy + bias) & 0x1FFFFF) << 21) |
           (static_cast<std::int64_t>(cz + bias) & 0x1FFFFF);
}

std::uint64_t pair_key(int a, int b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
           static_cast<std::uint32_t>(b);
}

}  // namespace

std::vector<Relation> collision_pairs(std::span<const Vec3> pos, std::span<const int> object_id,
                                      double radius, bool self_collisions,
                                      const std::vector<Relation>* material_relations,
                                      int material_dim) {
    const int n = static_cast<int>(pos.size());
    if (static_cast<int>(object_id.size()) != n)
        throw std::invalid_argument("collision_pairs: object_id size mismatch");
    if (!(radius > 0.0)) throw std::invalid_argument("collision_pairs: radius must be positive");
    for (const Vec3& p : pos)
        if (!p.finite()) throw std::invalid_argument("collision_pairs: non-finite position");

    std::unordered_set<std::uint64_t> bonded;
    if (self_collisions && material_relations) {
        bonded.reserve(material_relations->size() * 2);
        for (const Relation& r : *material_relations) bonded.insert(pair_key(r.sender, r.receiver));
    }

    std::unordered_map<std::int64_t, std::vector<int>> grid;
    grid.reserve(static_cast<size_t>(n) * 2);
    auto cell_of = [&](const Vec3& p) {
        return std::array<int, 3>{static_cast<int>(std::floor(p.x / radius)),
                                  static_cast<int>(std::floor(p.y / radius)),
                                  static_cast<int>(std::floor(p.z / radius))};
    };
    for (int i = 0; i < n; ++i) {
        auto c = cell_of(pos[i]);
        grid[grid_key(c[0], c[1], c[2])].push_back(i);
    }

    const double r2 = radius * radius;
    std::vector<std::vector<int>> senders(n);
    par::parallel_for(n, [&](std::int64_t ii) {
        const int i = static_cast<int>(ii);
        auto c = cell_of(pos[i]);
        auto& out = senders[i];
        for (int dx = -1; dx <= 1; ++dx)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dz = -1; dz <= 1; ++dz) {
                    auto it = grid.find(grid_key(c[0] + dx, c[1] + dy, c[2] + dz));
                    if (it == grid.end()) continue;
                    for (int j : it->second) {
                        if (j == i) continue;
                        const bool same_obj = object_id[j] == object_id[i];
                        if (same_obj && !self_collisions) continue;
                        if (same_obj && bonded.count(pair_key(i, j))) continue;
                        if ((pos[i] - pos[j]).norm2() < r2) out.push_back(j);
                    }
                }
        std::sort(out.begin(), out.end());
    });

    std::vector<Relation> result;
    for (int i = 0; i < n; ++i)
        for (int j : senders[i]) {
            Relation r;
            r.sender = j;
            r.receiver = i;
            r.kind = RelKind::Collision;
            r.material.assign(material_dim, 0.0);
            result.push_back(std::move(r));
        }
    return result;
}

FeatureSet build_features(const StepInput& in, const ModelConfig& cfg) {
    if (!in.hierarchy) throw std::invalid_argument("StepInput: missing hierarchy");
    const HierarchyGraph& h = *in.hierarchy;
    const int T = cfg.history;
    if (static_cast<int>(in.pos.size()) != T || static_cast<int>(in.vel.size()) != T ||
        static_cast<int>(in.force.size()) != T)
        throw std::invalid_argument("StepInput: frame count must equal the history length");
    const int L = h.leaf_count;
    const int M = h.node_count();
    for (int f = 0; f < T; ++f)
        if (static_cast<int>(in.pos[f].size()) != L || static_cast<int>(in.vel[f].size()) != L ||
            static_cast<int>(in.force[f].size()) != L)
            throw std::invalid_argument("StepInput: leaf array size mismatch");

    FeatureSet fs;
    fs.node_count = M;
    fs.leaf_count = L;
    fs.node_feat.reserve(T);
    std::vector<Vec3> npos, nvel;
    for (int f = 0; f < T; ++f) {
        aggregate_states(h, in.pos[f], in.vel[f], npos, nvel);
        Tensor2 feat(M, kNodeFeatureDim);
        for (int i = 0; i < M; ++i) {
            const Vec3 rel = npos[i] - npos[h.roots[h.object_id[i]]];
            double* row = feat.row(i);
            row[0] = rel.x;
            row[1] = rel.y;
            row[2] = rel.z;
            row[3] = nvel[i].x / cfg.dt;
            row[4] = nvel[i].y / cfg.dt;
            row[5] = nvel[i].z / cfg.dt;
            row[6] = std::log10(h.nodes[i].mass);
            row[7] = static_cast<double>(h.level[i]);
        }
        fs.node_feat.push_back(std::move(feat));
        if (f == T - 1) {
            fs.node_pos = npos;
            fs.node_vel_step = nvel;
        }
    }
    fs.force_dv = Tensor2(L, 3);
    for (int i = 0; i < L; ++i) {
        const Vec3 dv = in.current_force()[i] * (cfg.dt / h.nodes[i].mass);
        fs.force_dv.at(i, 0) = dv.x;
        fs.force_dv.at(i, 1) = dv.y;
        fs.force_dv.at(i, 2) = dv.z;
    }
    fs.gravity_rows = Tensor2(M, 3);
    for (int r : h.roots) {
        fs.gravity_rows.at(r, 0) = in.gravity.x * cfg.dt;
        fs.gravity_rows.at(r, 1) = in.gravity.y * cfg.dt;
        fs.gravity_rows.at(r, 2) = in.gravity.z * cfg.dt;
    }
    if (!(cfg.collision_radius > 0.0))
        throw std::invalid_argument("ModelConfig: collision_radius must be resolved (> 0)");
    fs.collisions = collision_pairs(
        std::span<const Vec3>(in.pos.back().data(), L),
        std::span<const int>(h.object_id.data(), L), cfg.collision_radius, cfg.self_collisions,
        in.material_relations, cfg.material_dim);
    return fs;
}

HierPlans HierPlans::build(const HierarchyGraph& h) {
    HierPlans p;
    const int M = h.node_count();
    const int K = h.material_dim;
    auto fill = [&](RelKind kind, std::vector<int>& ss, std::vector<int>& rr, Tensor2& mat,
                    std::shared_ptr<const ad::RowMap>& send,
                    std::shared_ptr<const ad::RowMap>& recv) {
        for (const Relation& r : h.kinship) {
            if (r.kind != kind) continue;
            ss.push_back(r.sender);
            rr.push_back(r.receiver);
        }
        mat = Tensor2(static_cast<int>(ss.size()), K);
        int e = 0;
        for (const Relation& r : h.kinship) {
            if (r.kind != kind) continue;
            for (int c = 0; c < K; ++c) mat.at(e, c) = r.material[c];
            e++;
        }
        send = ad::RowMap::build(ss, M);
        recv = ad::RowMap::build(rr, M);
    };
    fill(RelKind::LeafToAncestor, p.l2a_s, p.l2a_r, p.l2a_mat, p.l2a_send, p.l2a_recv);
    fill(RelKind::WithinSibling, p.ws_s, p.ws_r, p.ws_mat, p.ws_send, p.ws_recv);
    fill(RelKind::AncestorToDescendant, p.a2d_s, p.a2d_r, p.a2d_mat, p.a2d_send, p.a2d_recv);

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
    p.closure_send = ad::RowMap::build(cs, M);
    p.closure_recv = ad::RowMap::build(cr, M);

    std::vector<int> pad(h.leaf_count);
    for (int i = 0; i < h.leaf_count; ++i) pad[i] = i;
    p.leaf_pad = ad::RowMap::build(pad, M);

    std::vector<int> pos_map(M);
    p.parent_mask = Tensor2(M, 1);
    for (int i = 0; i < M; ++i) {
        pos_map[i] = h.parent[i] >= 0 ? h.parent[i] : i;
        p.parent_mask.d[i] = h.parent[i] >= 0 ? 1.0 : 0.0;
    }
    p.parent_or_self = ad::RowMap::build(pos_map, M);

    std::vector<int> lg(h.leaves_list.begin(), h.leaves_list.end());
    std::vector<int> lseg(h.leaves_list.size());
    p.leaf_inv_count = Tensor2(M, 1);
    for (int i = 0; i < M; ++i) {
        for (int e = h.leaves_offsets[i]; e < h.leaves_offsets[i + 1]; ++e) lseg[e] = i;
        p.leaf_inv_count.d[i] =
            1.0 / static_cast<double>(h.leaves_offsets[i + 1] - h.leaves_offsets[i]);
    }
    p.leaf_gather = ad::RowMap::build(lg, h.leaf_count);
    p.leaf_segsum = ad::RowMap::build(lseg, M);
    return p;
}

std::vector<Vec3> local_to_world(const HierarchyGraph& h, std::span<const Vec3> local) {
    if (static_cast<int>(local.size()) != h.node_count())
        throw std::invalid_argument("local_to_world: size mismatch");
    std::vector<Vec3> world(local.begin(), local.end());
    for (int i = 0; i < h.node_count(); ++i)
        for (int a = h.parent[i]; a >= 0; a = h.parent[a]) world[i] += local[a];
    return world;
}

MlpSpec HrnModel::force_spec() const {
    MlpSpec s;
    s.widths = {kNodeFeatureDim + 3};
    s.widths.insert(s.widths.end(), cfg_.hidden.begin(), cfg_.hidden.end());
    s.widths.push_back(cfg_.effect_dim);
    return s;
}

MlpSpec HrnModel::collision_spec() const {
    MlpSpec s;
    s.widths = {2 * kNodeFeatureDim + 3 + cfg_.material_dim};
    s.widths.insert(s.widths.end(), cfg_.hidden.begin(), cfg_.hidden.end());
    s.widths.push_back(cfg_.effect_dim);
    return s;
}

MlpSpec HrnModel::history_spec() const {
    MlpSpec s;
    s.widths = {kNodeFeatureDim * cfg_.history};
    s.widths.insert(s.widths.end(), cfg_.hidden.begin(), cfg_.hidden.end());
    s.widths.push_back(cfg_.effect_dim);
    return s;
}

MlpSpec HrnModel::stage_spec() const {
    MlpSpec s;
    s.widths = {2 * eta_feature_dim() + 3 + cfg_.material_dim + cfg_.effect_dim + 3};
    s.widths.insert(s.widths.end(), cfg_.hidden.begin(), cfg_.hidden.end());
    s.widths.push_back(cfg_.effect_dim);
    return s;
}

MlpSpec HrnModel::decoder_spec() const {
    MlpSpec s;
    s.widths = {kNodeFeatureDim + cfg_.effect_dim + 3};
    s.widths.insert(s.widths.end(), cfg_.decoder_hidden.begin(), cfg_.decoder_hidden.end());
    s.widths.push_back(3);
    return s;
}

MlpSpec HrnModel::flat_spec() const {
    MlpSpec s;
    s.widths = {2 * kNodeFeatureDim + 3 + cfg_.material_dim + cfg_.effect_dim};
    s.widths.insert(s.widths.end(), cfg_.hidden.begin(), cfg_.hidden.end());
    s.widths.push_back(cfg_.effect_dim);
    return s;
}

MlpSpec HrnModel::baseline_spec() const {
    MlpSpec s;
    s.widths = {cfg_.baseline_particles * 10 * cfg_.history};
    s.widths.insert(s.widths.end(), cfg_.baseline_hidden.begin(), cfg_.baseline_hidden.end());
    s.widths.push_back(cfg_.baseline_particles * 3);
    return s;
}

HrnModel HrnModel::init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    HrnModel m;
    m.cfg_ = cfg;
    std::mt19937_64 rng(seed);
    if (cfg.variant == Variant::MlpBaseline) {
        init_mlp_params(m.params_, "baseline_mlp", m.baseline_spec(), rng);
        return m;
    }
    if (!cfg.no_force_encoder) init_mlp_params(m.params_, "force_mlp", m.force_spec(), rng);
    if (!cfg.no_collision_encoder)
        init_mlp_params(m.params_, "collision_mlp", m.collision_spec(), rng);
    if (!cfg.no_history_encoder) init_mlp_params(m.params_, "history_mlp", m.history_spec(), rng);
    if (cfg.variant == Variant::Hrn) {
        init_mlp_params(m.params_, "stage_mlp", m.stage_spec(), rng);
    } else {
        init_mlp_params(m.params_, "flat_mlp", m.flat_spec(), rng);
    }
    init_mlp_params(m.params_, "decoder_mlp", m.decoder_spec(), rng);
    return m;
}

void HrnModel::validate_input(const StepInput& in) const {
    if (!in.hierarchy) throw std::invalid_argument("StepInput: missing hierarchy");
    if (static_cast<int>(in.pos.size()) != cfg_.history)
        throw std::invalid_argument("StepInput: history frame count mismatch");
}

namespace {

Tensor2 leaf_rows(const Tensor2& node_feat, int leaf_count) {
    Tensor2 out(leaf_count, node_feat.cols);
    std::copy(node_feat.d.begin(),
              node_feat.d.begin() + static_cast<size_t>(leaf_count) * node_feat.cols,
              out.d.begin());
    return out;
}

Tensor2 edge_disp(const std::vector<int>& senders, const std::vector<int>& receivers,
                  const std::vector<Vec3>& pos) {
    Tensor2 out(static_cast<int>(senders.size()), 3);
    for (size_t e = 0; e < senders.size(); ++e) {
        const Vec3 d = pos[senders[e]] - pos[receivers[e]];
        out.at(static_cast<int>(e), 0) = d.x;
        out.at(static_cast<int>(e), 1) = d.y;
        out.at(static_cast<int>(e), 2) = d.z;
    }
    return out;
}

Tensor2 stage_tag(int rows, int which) {
    Tensor2 out(rows, 3);
    for (int i = 0; i < rows; ++i) out.at(i, which) = 1.0;
    return out;
}

}  // namespace

std::unique_ptr<TapeStep> HrnModel::build_step(const StepInput& in, const HierPlans* plans) const {
    validate_input(in);
    auto ts = std::make_unique<TapeStep>(params_);
    ts->features = build_features(in, cfg_);
    const FeatureSet& fs = ts->features;
    const HierarchyGraph& h = *in.hierarchy;
    const int M = fs.node_count;
    const int L = fs.leaf_count;
    const int E = cfg_.effect_dim;
    const int K = cfg_.material_dim;
    ad::Tape& tape = ts->tape;
    ParamBinder& binder = ts->binder;

    HierPlans local_plans;
    if (!plans && cfg_.variant != Variant::MlpBaseline) {
        local_plans = HierPlans::build(h);
        plans = &local_plans;
    }

    if (cfg_.variant == Variant::MlpBaseline) {
        if (L != cfg_.baseline_particles)
            throw std::invalid_argument("baseline: particle count differs from trained shape");
        Tensor2 flat(1, L * 10 * cfg_.history);
        int c = 0;
        for (int f = 0; f < cfg_.history; ++f) {
            for (int i = 0; i < L; ++i) {
                const Vec3& p = in.pos[f][i];
                const Vec3& v = in.vel[f][i];
                const Vec3& fo = in.force[f][i];
                flat.d[c++] = p.x;
                flat.d[c++] = p.y;
                flat.d[c++] = p.z;
                flat.d[c++] = v.x;
                flat.d[c++] = v.y;
                flat.d[c++] = v.z;
                flat.d[c++] = h.nodes[i].mass;
                flat.d[c++] = fo.x;
                flat.d[c++] = fo.y;
                flat.d[c++] = fo.z;
            }
        }
        const int out = mlp_forward(tape, binder, "baseline_mlp", baseline_spec(),
                                    tape.input(std::move(flat)));
        const int world_leaf = tape.reshape(out, L, 3);
        // node deltas: leaf mean per node, locals parent-relative
        HierPlans tmp;
        if (!plans) {
            tmp = HierPlans::build(h);
            plans = &tmp;
        }
        const int node_sum = tape.segment_sum(tape.gather_rows(world_leaf, plans->leaf_gather),
                                              plans->leaf_segsum);
        const int world = tape.mul_rows(node_sum, tape.input(plans->leaf_inv_count));
        const int parent_world = tape.mul_rows(tape.gather_rows(world, plans->parent_or_self),
                                               tape.input(plans->parent_mask));
        ts->world_delta = world;
        ts->local_delta = tape.sub(world, parent_world);
        return ts;
    }

    const Tensor2& feat_cur = fs.node_feat.back();
    const int feat_cur_node = tape.input(feat_cur);
    const int leaf_feat_node = tape.input(leaf_rows(feat_cur, L));

    // Input effects on leaves: force, collision, history encoders (canonical
    // order), each L x E; ablated encoders drop out of the sum.
    std::vector<int> effect_parts;
    if (!cfg_.no_force_encoder) {
        const int x = tape.concat_cols({leaf_feat_node, tape.input(fs.force_dv)});
        effect_parts.push_back(mlp_forward(tape, binder, "force_mlp", force_spec(), x));
    }
    if (!cfg_.no_collision_encoder) {
        std::vector<int> cs, cr;
        cs.reserve(fs.collisions.size());
        cr.reserve(fs.collisions.size());
        for (const Relation& r : fs.collisions) {
            cs.push_back(r.sender);
            cr.push_back(r.receiver);
        }
        const auto send_plan = ad::RowMap::build(cs, L);
        const auto recv_plan = ad::RowMap::build(cr, L);
        std::vector<Vec3> leaf_pos(fs.node_pos.begin(), fs.node_pos.begin() + L);
        const int x = tape.concat_cols(
            {tape.gather_rows(leaf_feat_node, send_plan),
             tape.gather_rows(leaf_feat_node, recv_plan),
             tape.input(edge_disp(cs, cr, leaf_pos)),
             tape.input(Tensor2(static_cast<int>(cs.size()), K))});
        const int eff = mlp_forward(tape, binder, "collision_mlp", collision_spec(), x);
        effect_parts.push_back(tape.segment_sum(eff, recv_plan));
    }
    if (!cfg_.no_history_encoder) {
        std::vector<int> frames;
        for (int f = 0; f < cfg_.history; ++f)
            frames.push_back(f + 1 == cfg_.history ? leaf_feat_node
                                                   : tape.input(leaf_rows(fs.node_feat[f], L)));
        const int x = frames.size() == 1 ? frames[0] : tape.concat_cols(frames);
        effect_parts.push_back(mlp_forward(tape, binder, "history_mlp", history_spec(), x));
    }
    int e0_leaf;
    if (effect_parts.empty()) {
        e0_leaf = tape.input(Tensor2(L, E));
    } else {
        e0_leaf = effect_parts[0];
        for (size_t i = 1; i < effect_parts.size(); ++i) e0_leaf = tape.add(e0_leaf, effect_parts[i]);
    }

    int total_effect;  // M x E for HRN, L x E for flat
    int eta_feat_node = feat_cur_node;
    if (cfg_.no_force_encoder) {
        // forces ride along as extra node features for the propagation stages
        Tensor2 padded(M, 3);
        for (int i = 0; i < L; ++i)
            for (int c = 0; c < 3; ++c) padded.at(i, c) = fs.force_dv.at(i, c);
        eta_feat_node = tape.concat_cols({feat_cur_node, tape.input(std::move(padded))});
    }

    if (cfg_.variant == Variant::Hrn) {
        const int e0 = tape.segment_sum(e0_leaf, plans->leaf_pad);
        auto stage = [&](const std::vector<int>& ss, const std::vector<int>& rr,
                         const Tensor2& mat, std::shared_ptr<const ad::RowMap> send_plan,
                         std::shared_ptr<const ad::RowMap> recv_plan, int source_effect,
                         int tag) {
            const int x = tape.concat_cols({tape.gather_rows(eta_feat_node, send_plan),
                                            tape.gather_rows(eta_feat_node, recv_plan),
                                            tape.input(edge_disp(ss, rr, fs.node_pos)),
                                            tape.input(mat),
                                            tape.gather_rows(source_effect, send_plan),
                                            tape.input(stage_tag(static_cast<int>(ss.size()), tag))});
            return tape.segment_sum(mlp_forward(tape, binder, "stage_mlp", stage_spec(), x),
                                    recv_plan);
        };
        const int e_up = stage(plans->l2a_s, plans->l2a_r, plans->l2a_mat, plans->l2a_send,
                               plans->l2a_recv, e0, 0);
        int e_ws;
        if (cfg_.no_collision_encoder && !fs.collisions.empty()) {
            // collision relations join the sibling-stage edge set
            struct Edge {
                int s, r;
                bool coll;
            };
            std::vector<Edge> edges;
            edges.reserve(plans->ws_s.size() + fs.collisions.size());
            for (size_t e = 0; e < plans->ws_s.size(); ++e)
                edges.push_back({plans->ws_s[e], plans->ws_r[e], false});
            for (const Relation& r : fs.collisions) edges.push_back({r.sender, r.receiver, true});
            std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
                if (a.r != b.r) return a.r < b.r;
                return a.s < b.s;
            });
            std::vector<int> ss, rr;
            Tensor2 mat(static_cast<int>(edges.size()), K);
            std::unordered_map<std::uint64_t, int> ws_index;
            for (size_t e = 0; e < plans->ws_s.size(); ++e)
                ws_index[pair_key(plans->ws_s[e], plans->ws_r[e])] = static_cast<int>(e);
            for (size_t e = 0; e < edges.size(); ++e) {
                ss.push_back(edges[e].s);
                rr.push_back(edges[e].r);
                if (!edges[e].coll) {
                    const int src = ws_index.at(pair_key(edges[e].s, edges[e].r));
                    for (int c = 0; c < K; ++c)
                        mat.at(static_cast<int>(e), c) = plans->ws_mat.at(src, c);
                }
            }
            e_ws = stage(ss, rr, mat, ad::RowMap::build(ss, M), ad::RowMap::build(rr, M), e_up, 1);
        } else {
            e_ws = stage(plans->ws_s, plans->ws_r, plans->ws_mat, plans->ws_send, plans->ws_recv,
                         e_up, 1);
        }
        const int e_down = stage(plans->a2d_s, plans->a2d_r, plans->a2d_mat, plans->a2d_send,
                                 plans->a2d_recv, tape.add(e_up, e_ws), 2);
        total_effect = tape.add(tape.add(e_up, e_ws), e_down);

        const int psi_in =
            tape.concat_cols({feat_cur_node, total_effect, tape.input(fs.gravity_rows)});
        const int local = mlp_forward(tape, binder, "decoder_mlp", decoder_spec(), psi_in);
        const int world =
            tape.segment_sum(tape.gather_rows(local, plans->closure_send), plans->closure_recv);
        ts->local_delta = local;
        ts->world_delta = world;
        return ts;
    }

    // Flat-graph variant: single pairwise convolution over the fully
    // connected leaf graph, global deltas per leaf.
    {
        std::vector<int> ss, rr;
        ss.reserve(static_cast<size_t>(L) * (L - 1));
        rr.reserve(ss.capacity());
        for (int r = 0; r < L; ++r)
            for (int s = 0; s < L; ++s)
                if (s != r) {
                    ss.push_back(s);
                    rr.push_back(r);
                }
        Tensor2 mat(static_cast<int>(ss.size()), K);
        if (in.material_relations) {
            std::unordered_map<std::uint64_t, const Relation*> lookup;
            lookup.reserve(in.material_relations->size());
            for (const Relation& r : *in.material_relations)
                lookup[pair_key(r.sender, r.receiver)] = &r;
            for (size_t e = 0; e < ss.size(); ++e) {
                auto it = lookup.find(pair_key(ss[e], rr[e]));
                if (it == lookup.end()) continue;
                for (int c = 0; c < K && c < static_cast<int>(it->second->material.size()); ++c)
                    mat.at(static_cast<int>(e), c) = it->second->material[c];
            }
        }
        const auto send_plan = ad::RowMap::build(ss, L);
        const auto recv_plan = ad::RowMap::build(rr, L);
        std::vector<Vec3> leaf_pos(fs.node_pos.begin(), fs.node_pos.begin() + L);
        const int x = tape.concat_cols({tape.gather_rows(leaf_feat_node, send_plan),
                                        tape.gather_rows(leaf_feat_node, recv_plan),
                                        tape.input(edge_disp(ss, rr, leaf_pos)),
                                        tape.input(std::move(mat)),
                                        tape.gather_rows(e0_leaf, send_plan)});
        total_effect =
            tape.segment_sum(mlp_forward(tape, binder, "flat_mlp", flat_spec(), x), recv_plan);

        Tensor2 grav_leaf(L, 3);
        for (int i = 0; i < L; ++i) {
            grav_leaf.at(i, 0) = in.gravity.x * cfg_.dt;
            grav_leaf.at(i, 1) = in.gravity.y * cfg_.dt;
            grav_leaf.at(i, 2) = in.gravity.z * cfg_.dt;
        }
        const int psi_in =
            tape.concat_cols({leaf_feat_node, total_effect, tape.input(std::move(grav_leaf))});
        const int world_leaf = mlp_forward(tape, binder, "decoder_mlp", decoder_spec(), psi_in);
        const int node_sum = tape.segment_sum(tape.gather_rows(world_leaf, plans->leaf_gather),
                                              plans->leaf_segsum);
        const int world = tape.mul_rows(node_sum, tape.input(plans->leaf_inv_count));
        const int parent_world = tape.mul_rows(tape.gather_rows(world, plans->parent_or_self),
                                               tape.input(plans->parent_mask));
        ts->world_delta = world;
        ts->local_delta = tape.sub(world, parent_world);
        return ts;
    }
}

StepOutput HrnModel::step(const StepInput& in) const {
    auto ts = build_step(in, nullptr);
    const Tensor2& local = ts->tape.value(ts->local_delta);
    const Tensor2& world = ts->tape.value(ts->world_delta);
    const HierarchyGraph& h = *in.hierarchy;
    StepOutput out;
    out.local_delta.resize(h.node_count());
    out.world_delta.resize(h.node_count());
    for (int i = 0; i < h.node_count(); ++i) {
        out.local_delta[i] = {local.at(i, 0), local.at(i, 1), local.at(i, 2)};
        out.world_delta[i] = {world.at(i, 0), world.at(i, 1), world.at(i, 2)};
    }
    out.next_pos.resize(h.leaf_count);
    out.next_vel.resize(h.leaf_count);
    for (int i = 0; i < h.leaf_count; ++i) {
        out.next_vel[i] = out.world_delta[i];
        out.next_pos[i] = in.pos.back()[i] + out.world_delta[i];
    }
    return out;
}

Tensor2 HrnModel::propagate(const StepInput& in, const Tensor2& e0) const {
    if (cfg_.variant != Variant::Hrn)
        throw std::invalid_argument("propagate: only defined for the hierarchical variant");
    validate_input(in);
    const FeatureSet fs = build_features(in, cfg_);
    const HierarchyGraph& h = *in.hierarchy;
    const int M = fs.node_count;
    if (e0.rows != M || e0.cols != cfg_.effect_dim)
        throw std::invalid_argument("propagate: e0 must be node_count x effect_dim");
    const HierPlans plans = HierPlans::build(h);
    ad::Tape tape;
    ParamBinder binder(params_);
    int feat = tape.input(fs.node_feat.back());
    if (cfg_.no_force_encoder) {
        Tensor2 padded(M, 3);
        for (int i = 0; i < fs.leaf_count; ++i)
            for (int c = 0; c < 3; ++c) padded.at(i, c) = fs.force_dv.at(i, c);
        feat = tape.concat_cols({feat, tape.input(std::move(padded))});
    }
    const int e0_node = tape.input(e0);
    auto stage = [&](const std::vector<int>& ss, const std::vector<int>& rr, const Tensor2& mat,
                     std::shared_ptr<const ad::RowMap> sp, std::shared_ptr<const ad::RowMap> rp,
                     int src, int tag) {
        const int x = tape.concat_cols({tape.gather_rows(feat, sp), tape.gather_rows(feat, rp),
                                        tape.input(edge_disp(ss, rr, fs.node_pos)),
                                        tape.input(mat), tape.gather_rows(src, sp),
                                        tape.input(stage_tag(static_cast<int>(ss.size()), tag))});
        return tape.segment_sum(mlp_forward(tape, binder, "stage_mlp", stage_spec(), x), rp);
    };
    const int e_up = stage(plans.l2a_s, plans.l2a_r, plans.l2a_mat, plans.l2a_send, plans.l2a_recv,
                           e0_node, 0);
    const int e_ws = stage(plans.ws_s, plans.ws_r, plans.ws_mat, plans.ws_send, plans.ws_recv,
                           e_up, 1);
    const int e_down = stage(plans.a2d_s, plans.a2d_r, plans.a2d_mat, plans.a2d_send,
                             plans.a2d_recv, tape.add(e_up, e_ws), 2);
    return tape.value(tape.add(tape.add(e_up, e_ws), e_down));
}

std::vector<double> HrnModel::force_effect_single(const StepInput& in, int leaf) const {
    const FeatureSet fs = build_features(in, cfg_);
    if (leaf < 0 || leaf >= fs.leaf_count)
        throw std::invalid_argument("force encoder expects a leaf node");
    ad::Tape tape;
    Tensor2 x(1, kNodeFeatureDim + 3);
    for (int c = 0; c < kNodeFeatureDim; ++c) x.d[c] = fs.node_feat.back().at(leaf, c);
    for (int c = 0; c < 3; ++c) x.d[kNodeFeatureDim + c] = fs.force_dv.at(leaf, c);
    const int out = mlp_forward(tape, params_, "force_mlp", force_spec(), tape.input(std::move(x)));
    return tape.value(out).d;
}

std::vector<double> HrnModel::collision_effect_single(const StepInput& in,
                                                      const Relation& rel) const {
    if (rel.kind != RelKind::Collision)
        throw std::invalid_argument("collision encoder expects a collision relation");
    const FeatureSet fs = build_features(in, cfg_);
    if (rel.sender < 0 || rel.sender >= fs.leaf_count || rel.receiver < 0 ||
        rel.receiver >= fs.leaf_count)
        throw std::invalid_argument("collision relation endpoints must be leaves");
    ad::Tape tape;
    const int K = cfg_.material_dim;
    Tensor2 x(1, 2 * kNodeFeatureDim + 3 + K);
    int c = 0;
    for (int k = 0; k < kNodeFeatureDim; ++k) x.d[c++] = fs.node_feat.back().at(rel.sender, k);
    for (int k = 0; k < kNodeFeatureDim; ++k) x.d[c++] = fs.node_feat.back().at(rel.receiver, k);
    const Vec3 disp = fs.node_pos[rel.sender] - fs.node_pos[rel.receiver];
    x.d[c++] = disp.x;
    x.d[c++] = disp.y;
    x.d[c++] = disp.z;
    for (int k = 0; k < K; ++k) x.d[c++] = 0.0;
    const int out =
        mlp_forward(tape, params_, "collision_mlp", collision_spec(), tape.input(std::move(x)));
    return tape.value(out).d;
}

std::vector<double> HrnModel::history_effect_single(const StepInput& in, int leaf) const {
    const FeatureSet fs = build_features(in, cfg_);
    if (leaf < 0 || leaf >= fs.leaf_count)
        throw std::invalid_argument("history encoder expects a leaf node");
    ad::Tape tape;
    Tensor2 x(1, kNodeFeatureDim * cfg_.history);
    int c = 0;
    for (int f = 0; f < cfg_.history; ++f)
        for (int k = 0; k < kNodeFeatureDim; ++k) x.d[c++] = fs.node_feat[f].at(leaf, k);
    const int out =
        mlp_forward(tape, params_, "history_mlp", history_spec(), tape.input(std::move(x)));
    return tape.value(out).d;
}

std::vector<double> HrnModel::decode_motion_single(const StepInput& in, int node,
                                                   std::span<const double> effect) const {
    const FeatureSet fs = build_features(in, cfg_);
    if (node < 0 || node >= fs.node_count) throw std::invalid_argument("decode: unknown node");
    if (static_cast<int>(effect.size()) != cfg_.effect_dim)
        throw std::invalid_argument("decode: effect size mismatch");
    ad::Tape tape;
    Tensor2 x(1, kNodeFeatureDim + cfg_.effect_dim + 3);
    int c = 0;
    for (int k = 0; k < kNodeFeatureDim; ++k) x.d[c++] = fs.node_feat.back().at(node, k);
    for (double e : effect) x.d[c++] = e;
    for (int k = 0; k < 3; ++k) x.d[c++] = fs.gravity_rows.at(node, k);
    const int out =
        mlp_forward(tape, params_, "decoder_mlp", decoder_spec(), tape.input(std::move(x)));
    return tape.value(out).d;
}

}  // namespace hrn::model
