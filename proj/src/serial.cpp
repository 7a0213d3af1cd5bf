#include "hrn/serial.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <unordered_map>

namespace hrn::serial {

std::vector<double> mlp_eval_row(const ParamStore& ps, const std::string& prefix,
                                 const MlpSpec& spec, std::span<const double> input) {
    if (static_cast<int>(input.size()) != spec.input_dim())
        throw std::invalid_argument("mlp_eval_row: input width mismatch");
    std::vector<double> x(input.begin(), input.end());
    for (int l = 0; l < spec.layers(); ++l) {
        const Tensor2& w = ps.value(prefix + ".w" + std::to_string(l));
        const Tensor2& b = ps.value(prefix + ".b" + std::to_string(l));
        std::vector<double> y(w.cols, 0.0);
        for (int k = 0; k < w.rows; ++k) {
            const double xv = x[k];
            const double* wrow = w.row(k);
            for (int j = 0; j < w.cols; ++j) y[j] += xv * wrow[j];
        }
        for (int j = 0; j < w.cols; ++j) y[j] += b.d[j];
        if (l + 1 < spec.layers())
            for (double& v : y) v = v > 0.0 ? v : 0.0;
        x = std::move(y);
    }
    return x;
}

Tensor2 matmul(const Tensor2& a, const Tensor2& b) {
    if (a.cols != b.rows) throw std::invalid_argument("serial::matmul: shape mismatch");
    Tensor2 c(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        double* crow = c.row(i);
        const double* arow = a.row(i);
        for (int k = 0; k < a.cols; ++k) {
            const double av = arow[k];
            const double* brow = b.row(k);
            for (int j = 0; j < b.cols; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

std::vector<Relation> collision_pairs_brute(std::span<const Vec3> pos,
                                            std::span<const int> object_id, double radius,
                                            bool self_collisions,
                                            const std::vector<Relation>* material_relations,
                                            int material_dim) {
    const int n = static_cast<int>(pos.size());
    auto bonded = [&](int a, int b) {
        if (!material_relations) return false;
        for (const Relation& r : *material_relations)
            if (r.sender == a && r.receiver == b) return true;
        return false;
    };
    std::vector<Relation> out;
    const double r2 = radius * radius;
    for (int recv = 0; recv < n; ++recv) {
        for (int send = 0; send < n; ++send) {
            if (send == recv) continue;
            const bool same = object_id[send] == object_id[recv];
            if (same && !self_collisions) continue;
            if (same && bonded(recv, send)) continue;
            if ((pos[recv] - pos[send]).norm2() >= r2) continue;
            Relation r;
            r.sender = send;
            r.receiver = recv;
            r.kind = RelKind::Collision;
            r.material.assign(material_dim, 0.0);
            out.push_back(std::move(r));
        }
    }
    return out;
}

namespace {

struct EdgeRef {
    int sender, receiver;
};

std::vector<double> edge_material(const HierarchyGraph& h, RelKind kind, int s, int r) {
    for (const Relation& rel : h.kinship)
        if (rel.kind == kind && rel.sender == s && rel.receiver == r) return rel.material;
    throw std::logic_error("edge_material: edge not found in kinship list");
}

}  // namespace

Tensor2 propagate_reference(const HierarchyGraph& h, const Tensor2& eta_features,
                            const std::vector<Vec3>& node_pos, const Tensor2& e0,
                            const ParamStore& params, const MlpSpec& stage_spec,
                            int material_dim) {
    const int M = h.node_count();
    const int E = e0.cols;
    const int F = eta_features.cols;
    if (eta_features.rows != M || e0.rows != M)
        throw std::invalid_argument("propagate_reference: shape mismatch");

    // Edge sets from tree structure only.
    std::vector<EdgeRef> up, within, down;
    for (int d = 0; d < M; ++d)
        for (int a = h.parent[d]; a >= 0; a = h.parent[a]) {
            down.push_back({a, d});
            if (h.is_leaf(d)) up.push_back({d, a});
        }
    for (int v = h.leaf_count; v < M; ++v)
        for (int i : h.children[v])
            for (int j : h.children[v])
                if (i != j) within.push_back({i, j});
    auto order = [](const EdgeRef& a, const EdgeRef& b) {
        if (a.receiver != b.receiver) return a.receiver < b.receiver;
        return a.sender < b.sender;
    };
    std::sort(up.begin(), up.end(), order);
    std::sort(within.begin(), within.end(), order);
    std::sort(down.begin(), down.end(), order);

    auto run_stage = [&](const std::vector<EdgeRef>& edges, RelKind kind, const Tensor2& source,
                         int tag) {
        Tensor2 acc(M, E);
        std::vector<double> x(2 * F + 3 + material_dim + E + 3);
        for (const EdgeRef& e : edges) {
            int c = 0;
            for (int k = 0; k < F; ++k) x[c++] = eta_features.at(e.sender, k);
            for (int k = 0; k < F; ++k) x[c++] = eta_features.at(e.receiver, k);
            const Vec3 disp = node_pos[e.sender] - node_pos[e.receiver];
            x[c++] = disp.x;
            x[c++] = disp.y;
            x[c++] = disp.z;
            const std::vector<double> mat = edge_material(h, kind, e.sender, e.receiver);
            for (int k = 0; k < material_dim; ++k)
                x[c++] = k < static_cast<int>(mat.size()) ? mat[k] : 0.0;
            for (int k = 0; k < E; ++k) x[c++] = source.at(e.sender, k);
            for (int k = 0; k < 3; ++k) x[c++] = (k == tag) ? 1.0 : 0.0;
            const std::vector<double> y = mlp_eval_row(params, "stage_mlp", stage_spec, x);
            for (int k = 0; k < E; ++k) acc.at(e.receiver, k) += y[k];
        }
        return acc;
    };

    const Tensor2 e_up = run_stage(up, RelKind::LeafToAncestor, e0, 0);
    const Tensor2 e_ws = run_stage(within, RelKind::WithinSibling, e_up, 1);
    Tensor2 up_plus_ws(M, E);
    for (size_t i = 0; i < up_plus_ws.size(); ++i) up_plus_ws.d[i] = e_up.d[i] + e_ws.d[i];
    const Tensor2 e_down = run_stage(down, RelKind::AncestorToDescendant, up_plus_ws, 2);
    Tensor2 total(M, E);
    for (size_t i = 0; i < total.size(); ++i)
        total.d[i] = (e_up.d[i] + e_ws.d[i]) + e_down.d[i];
    return total;
}

Tensor2 flat_propagate_reference(const HierarchyGraph& h, const Tensor2& leaf_features,
                                 const std::vector<Vec3>& leaf_pos, const Tensor2& e0_leaf,
                                 const std::vector<Relation>* material_relations,
                                 const ParamStore& params, const MlpSpec& flat_spec,
                                 int material_dim) {
    const int L = h.leaf_count;
    const int E = e0_leaf.cols;
    const int F = leaf_features.cols;
    Tensor2 acc(L, E);
    std::vector<double> x(2 * F + 3 + material_dim + E);
    for (int recv = 0; recv < L; ++recv) {
        for (int send = 0; send < L; ++send) {
            if (send == recv) continue;
            int c = 0;
            for (int k = 0; k < F; ++k) x[c++] = leaf_features.at(send, k);
            for (int k = 0; k < F; ++k) x[c++] = leaf_features.at(recv, k);
            const Vec3 disp = leaf_pos[send] - leaf_pos[recv];
            x[c++] = disp.x;
            x[c++] = disp.y;
            x[c++] = disp.z;
            std::vector<double> mat(material_dim, 0.0);
            if (material_relations) {
                for (const Relation& r : *material_relations)
                    if (r.sender == send && r.receiver == recv) {
                        for (int k = 0; k < material_dim && k < static_cast<int>(r.material.size());
                             ++k)
                            mat[k] = r.material[k];
                        break;
                    }
            }
            for (int k = 0; k < material_dim; ++k) x[c++] = mat[k];
            for (int k = 0; k < E; ++k) x[c++] = e0_leaf.at(send, k);
            const std::vector<double> y = mlp_eval_row(params, "flat_mlp", flat_spec, x);
            for (int k = 0; k < E; ++k) acc.at(recv, k) += y[k];
        }
    }
    return acc;
}

sim::SimState sim_step_reference(const sim::SimState& state, double dt,
                                 std::span<const Vec3> forces, const sim::SimParams& params) {
    const int n = static_cast<int>(state.particles.size());
    std::vector<Vec3> f(n);
    for (int i = 0; i < n; ++i)
        f[i] = forces[i] + state.gravity * state.particles[i].mass;
    for (const sim::Spring& sp : state.springs) {
        const Particle& pi = state.particles[sp.i];
        const Particle& pj = state.particles[sp.j];
        const Vec3 d = pj.position - pi.position;
        const double len = d.norm();
        if (len <= 1e-12) continue;
        const Vec3 dir = d / len;
        const double vrel = (pj.velocity - pi.velocity).dot(dir);
        const double mag =
            params.spring_unit_k * sp.stiffness * (len - sp.rest) + params.spring_damping * vrel;
        f[sp.i] += dir * mag;
        f[sp.j] -= dir * mag;
    }
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            if (state.static_mask[i] || state.static_mask[j]) continue;
            if (state.object_id[i] == state.object_id[j]) continue;
            const Vec3 d = state.particles[i].position - state.particles[j].position;
            const double len = d.norm();
            const double reach = state.radius[i] + state.radius[j];
            if (len <= 1e-12 || len >= reach) continue;
            const Vec3 nrm = d / len;
            double mag = params.contact_k * (reach - len);
            const Vec3 vrel = state.particles[i].velocity - state.particles[j].velocity;
            const double vn = vrel.dot(nrm);
            if (vn < 0.0) mag -= params.contact_damping * vn;
            const Vec3 vt = vrel - nrm * vn;
            const Vec3 force = nrm * mag - vt * params.contact_tangent_damping;
            f[i] += force;
            f[j] -= force;
        }
    }
    sim::SimState out = state;
    for (int i = 0; i < n; ++i) {
        Particle& p = out.particles[i];
        if (state.static_mask[i]) {
            p.velocity = Vec3{};
            continue;
        }
        p.velocity += f[i] * (dt / p.mass);
        p.position += p.velocity * dt;
        if (state.surface.has_value()) {
            const double h = state.surface->height_at(p.position.x, p.position.z);
            if (std::isfinite(h) && p.position.y < h + state.radius[i]) {
                p.position.y = h + state.radius[i];
                const Vec3 nrm = state.surface->normal_at(p.position.x, p.position.z);
                const double vn = p.velocity.dot(nrm);
                Vec3 vt = p.velocity - nrm * vn;
                vt *= (1.0 - params.surface_friction);
                p.velocity = vt + nrm * (vn < 0.0 ? -params.restitution * vn : vn);
            }
        }
    }
    return out;
}

}  // namespace hrn::serial
