#include "hrn/graph.hpp"

#include <algorithm>
#include <deque>
#include <limits>
#include <random>
#include <stdexcept>
#include <unordered_map>

namespace hrn {

int SceneGraph::object_count() const {
    int n = 0;
    for (int id : object_id) n = std::max(n, id + 1);
    return n;
}

void SceneGraph::validate() const {
    if (particles.size() != object_id.size())
        throw std::invalid_argument("SceneGraph: object_id size mismatch");
    for (const Particle& p : particles) {
        if (!(p.mass > 0.0) || !p.position.finite() || !p.velocity.finite())
            throw std::invalid_argument("SceneGraph: non-finite particle or non-positive mass");
    }
    for (const Relation& r : relations) {
        if (r.sender < 0 || r.sender >= particle_count() || r.receiver < 0 ||
            r.receiver >= particle_count() || r.sender == r.receiver)
            throw std::invalid_argument("SceneGraph: bad relation endpoints");
        if (object_id[r.sender] != object_id[r.receiver])
            throw std::invalid_argument("SceneGraph: relation crosses objects");
    }
}

std::vector<int> kmeans_cluster(const std::vector<Vec3>& points, int k, std::uint64_t seed,
                                int max_iters) {
    const int n = static_cast<int>(points.size());
    if (k < 1 || k > n) throw std::invalid_argument("kmeans_cluster: need 1 <= k <= n");
    for (const Vec3& p : points)
        if (!p.finite()) throw std::invalid_argument("kmeans_cluster: non-finite point");

    std::mt19937_64 rng(seed);
    std::vector<Vec3> centroids;
    centroids.reserve(k);
    {
        std::uniform_int_distribution<int> pick(0, n - 1);
        centroids.push_back(points[pick(rng)]);
        std::vector<double> best(n, std::numeric_limits<double>::infinity());
        while (static_cast<int>(centroids.size()) < k) {
            const Vec3& last = centroids.back();
            int far_idx = 0;
            double far_d = -1.0;
            for (int i = 0; i < n; ++i) {
                best[i] = std::min(best[i], (points[i] - last).norm2());
                if (best[i] > far_d) {
                    far_d = best[i];
                    far_idx = i;
                }
            }
            centroids.push_back(points[far_idx]);
        }
    }

    std::vector<int> assign(n, 0), prev(n, -1);
    std::vector<int> count(k, 0);
    for (int iter = 0; iter < max_iters; ++iter) {
        for (int i = 0; i < n; ++i) {
            int bc = 0;
            double bd = std::numeric_limits<double>::infinity();
            for (int c = 0; c < k; ++c) {
                const double d = (points[i] - centroids[c]).norm2();
                if (d < bd) {
                    bd = d;
                    bc = c;
                }
            }
            assign[i] = bc;
        }
        std::fill(count.begin(), count.end(), 0);
        for (int a : assign) count[a]++;
        // Re-seed empty clusters with the point farthest from its own
        // centroid, never emptying another cluster.
        for (int c = 0; c < k; ++c) {
            if (count[c] > 0) continue;
            int far_idx = -1;
            double far_d = -1.0;
            for (int i = 0; i < n; ++i) {
                if (count[assign[i]] < 2) continue;
                const double d = (points[i] - centroids[assign[i]]).norm2();
                if (d > far_d) {
                    far_d = d;
                    far_idx = i;
                }
            }
            if (far_idx < 0) throw std::logic_error("kmeans_cluster: cannot fix empty cluster");
            count[assign[far_idx]]--;
            assign[far_idx] = c;
            count[c] = 1;
        }
        if (assign == prev) break;
        prev = assign;
        std::vector<Vec3> sum(k);
        for (int i = 0; i < n; ++i) sum[assign[i]] += points[i];
        for (int c = 0; c < k; ++c) centroids[c] = sum[c] / static_cast<double>(count[c]);
    }
    return assign;
}

Particle aggregate_node(std::span<const Particle> children) {
    if (children.empty()) throw std::invalid_argument("aggregate_node: empty child list");
    Particle out;
    out.mass = 0.0;
    for (const Particle& c : children) {
        out.position += c.position;
        out.velocity += c.velocity;
        out.mass += c.mass;
    }
    const double inv = 1.0 / static_cast<double>(children.size());
    out.position *= inv;
    out.velocity *= inv;
    return out;
}

namespace {

Particle aggregate_ids(const std::vector<Particle>& all, const std::vector<int>& ids) {
    std::vector<Particle> tmp;
    tmp.reserve(ids.size());
    for (int i : ids) tmp.push_back(all[i]);
    return aggregate_node(tmp);
}

std::uint64_t pair_key(int a, int b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
           static_cast<std::uint32_t>(b);
}

}  // namespace

HierarchyGraph build_hierarchy(const SceneGraph& scene, const HierarchyConfig& cfg) {
    scene.validate();
    if (cfg.cluster_size < 2) throw std::invalid_argument("HierarchyConfig: cluster_size >= 2");
    if (cfg.kmeans_iters < 1) throw std::invalid_argument("HierarchyConfig: kmeans_iters >= 1");

    const int n_leaves = scene.particle_count();
    const int n_objects = scene.object_count();
    int material_dim = 1;
    for (const Relation& r : scene.relations)
        material_dim = std::max(material_dim, static_cast<int>(r.material.size()));

    // Per-object leaf lists (scene order) and connectivity check.
    std::vector<std::vector<int>> obj_leaves(n_objects);
    for (int i = 0; i < n_leaves; ++i) obj_leaves[scene.object_id[i]].push_back(i);
    {
        std::vector<std::vector<int>> adj(n_leaves);
        for (const Relation& r : scene.relations) adj[r.sender].push_back(r.receiver);
        std::vector<char> seen(n_leaves, 0);
        for (int o = 0; o < n_objects; ++o) {
            if (obj_leaves[o].empty()) throw std::invalid_argument("build_hierarchy: empty object");
            std::deque<int> q{obj_leaves[o][0]};
            seen[obj_leaves[o][0]] = 1;
            int reached = 0;
            while (!q.empty()) {
                int u = q.front();
                q.pop_front();
                reached++;
                for (int v : adj[u])
                    if (!seen[v]) {
                        seen[v] = 1;
                        q.push_back(v);
                    }
            }
            if (reached != static_cast<int>(obj_leaves[o].size()))
                throw std::invalid_argument("build_hierarchy: object " + std::to_string(o) +
                                            " is disconnected; split objects first");
        }
    }

    // Temporary ids: leaves 0..n-1, created nodes appended. Renumbered at the
    // end so intermediates precede roots.
    std::vector<Particle> tnodes(scene.particles);
    std::vector<int> tparent(n_leaves, -1);
    std::vector<int> tobject(scene.object_id);
    std::vector<char> tis_root;
    tis_root.assign(n_leaves, 0);
    std::vector<std::vector<int>> tleaves(n_leaves);  // node -> leaf ids (temp)
    struct TEdge {
        RelKind kind;
        int sender, receiver;
    };
    std::vector<TEdge> tedges;
    std::mt19937_64 master_rng(cfg.seed);

    auto new_node = [&](const Particle& p, int parent, int object, std::vector<int> leaves,
                        bool root) {
        const int id = static_cast<int>(tnodes.size());
        tnodes.push_back(p);
        tparent.push_back(parent);
        tobject.push_back(object);
        tis_root.push_back(root ? 1 : 0);
        tleaves.push_back(std::move(leaves));
        return id;
    };

    for (int o = 0; o < n_objects; ++o) {
        const std::vector<int>& leaves = obj_leaves[o];
        const int root =
            new_node(aggregate_ids(tnodes, leaves), -1, o, leaves, /*root=*/true);
        for (int l : leaves) {
            tparent[l] = root;
            tedges.push_back({RelKind::AncestorToDescendant, root, l});
            tedges.push_back({RelKind::LeafToAncestor, l, root});
        }
        std::deque<int> queue{root};
        while (!queue.empty()) {
            const int curr = queue.front();
            queue.pop_front();
            const std::vector<int>& curr_leaves = tleaves[curr];
            std::vector<int> clique;
            if (static_cast<int>(curr_leaves.size()) > cfg.cluster_size) {
                std::vector<Vec3> pts;
                pts.reserve(curr_leaves.size());
                for (int l : curr_leaves) pts.push_back(tnodes[l].position);
                const std::uint64_t sub_seed = master_rng();
                const std::vector<int> assign =
                    kmeans_cluster(pts, cfg.cluster_size, sub_seed, cfg.kmeans_iters);
                std::vector<std::vector<int>> clusters(cfg.cluster_size);
                for (size_t i = 0; i < curr_leaves.size(); ++i)
                    clusters[assign[i]].push_back(curr_leaves[i]);
                for (const std::vector<int>& cluster : clusters) {
                    if (cluster.size() > 1) {
                        const int node = new_node(aggregate_ids(tnodes, cluster), curr, o,
                                                  cluster, /*root=*/false);
                        for (int a = curr; a >= 0; a = tparent[a])
                            tedges.push_back({RelKind::AncestorToDescendant, a, node});
                        for (int l : cluster) {
                            tparent[l] = node;
                            tedges.push_back({RelKind::AncestorToDescendant, node, l});
                            tedges.push_back({RelKind::LeafToAncestor, l, node});
                        }
                        clique.push_back(node);
                        queue.push_back(node);
                    } else {
                        clique.push_back(cluster[0]);
                    }
                }
            } else {
                clique = curr_leaves;
            }
            for (int i : clique)
                for (int j : clique)
                    if (i != j) tedges.push_back({RelKind::WithinSibling, i, j});
        }
    }

    // Renumber: leaves, intermediates (creation order), roots (object order).
    const int n_total = static_cast<int>(tnodes.size());
    std::vector<int> remap(n_total, -1);
    for (int i = 0; i < n_leaves; ++i) remap[i] = i;
    int next = n_leaves;
    for (int i = n_leaves; i < n_total; ++i)
        if (!tis_root[i]) remap[i] = next++;
    const int first_root = next;
    for (int i = n_leaves; i < n_total; ++i)
        if (tis_root[i]) remap[i] = next++;

    HierarchyGraph h;
    h.leaf_count = n_leaves;
    h.material_dim = material_dim;
    h.nodes.resize(n_total);
    h.level.assign(n_total, 0);
    h.parent.assign(n_total, -1);
    h.object_id.resize(n_total);
    h.children.resize(n_total);
    h.roots.resize(n_objects, -1);
    std::vector<std::vector<int>> leaves_by_node(n_total);
    for (int i = 0; i < n_total; ++i) {
        const int ni = remap[i];
        h.nodes[ni] = tnodes[i];
        h.parent[ni] = tparent[i] < 0 ? -1 : remap[tparent[i]];
        h.object_id[ni] = tobject[i];
        leaves_by_node[ni] = tleaves[i];  // leaf ids are stable under remap
        if (tis_root[i]) h.roots[tobject[i]] = ni;
    }
    for (int i = 0; i < n_total; ++i)
        if (h.parent[i] >= 0) h.children[h.parent[i]].push_back(i);
    for (auto& c : h.children) std::sort(c.begin(), c.end());

    // Levels: height above the leaf tier. Children are created after parents
    // in temp order, so walking renumbered ids is not enough; iterate to a
    // fixed point instead (depth is O(log n)).
    {
        bool changed = true;
        while (changed) {
            changed = false;
            for (int i = n_leaves; i < n_total; ++i) {
                int lv = 0;
                for (int c : h.children[i]) lv = std::max(lv, h.level[c] + 1);
                if (lv != h.level[i]) {
                    h.level[i] = lv;
                    changed = true;
                }
            }
        }
    }

    // Leaves CSR (ascending leaf ids per node).
    h.leaves_offsets.assign(n_total + 1, 0);
    for (int i = 0; i < n_total; ++i) {
        std::sort(leaves_by_node[i].begin(), leaves_by_node[i].end());
        h.leaves_offsets[i + 1] = h.leaves_offsets[i] + static_cast<int>(leaves_by_node[i].size());
    }
    h.leaves_list.reserve(h.leaves_offsets.back());
    for (int i = 0; i < n_total; ++i)
        h.leaves_list.insert(h.leaves_list.end(), leaves_by_node[i].begin(),
                             leaves_by_node[i].end());

    // Node materials: leaves average their incident scene-edge materials,
    // internal nodes average their leaves.
    h.node_material.assign(n_total, std::vector<double>(material_dim, 0.0));
    {
        std::vector<int> deg(n_leaves, 0);
        for (const Relation& r : scene.relations) {
            for (int end : {r.sender, r.receiver}) {
                for (int c = 0; c < static_cast<int>(r.material.size()); ++c)
                    h.node_material[end][c] += r.material[c];
                deg[end]++;
            }
        }
        for (int i = 0; i < n_leaves; ++i)
            if (deg[i] > 0)
                for (double& v : h.node_material[i]) v /= static_cast<double>(deg[i]);
        for (int i = n_leaves; i < n_total; ++i) {
            const auto ls = leaves_by_node[i];
            for (int l : ls)
                for (int c = 0; c < material_dim; ++c)
                    h.node_material[i][c] += h.node_material[l][c];
            for (double& v : h.node_material[i]) v /= static_cast<double>(ls.size());
        }
    }

    // Kinship edges with materials; direct scene relations win on leaf pairs.
    std::unordered_map<std::uint64_t, const Relation*> scene_edge;
    scene_edge.reserve(scene.relations.size());
    for (const Relation& r : scene.relations) scene_edge[pair_key(r.sender, r.receiver)] = &r;
    h.kinship.reserve(tedges.size());
    for (const TEdge& e : tedges) {
        Relation r;
        r.kind = e.kind;
        r.sender = remap[e.sender];
        r.receiver = remap[e.receiver];
        r.material.assign(material_dim, 0.0);
        const Relation* direct = nullptr;
        if (r.sender < n_leaves && r.receiver < n_leaves) {
            auto it = scene_edge.find(pair_key(r.sender, r.receiver));
            if (it != scene_edge.end()) direct = it->second;
        }
        if (direct) {
            for (int c = 0; c < static_cast<int>(direct->material.size()); ++c)
                r.material[c] = direct->material[c];
        } else {
            for (int c = 0; c < material_dim; ++c)
                r.material[c] =
                    0.5 * (h.node_material[r.sender][c] + h.node_material[r.receiver][c]);
        }
        h.kinship.push_back(std::move(r));
    }
    std::sort(h.kinship.begin(), h.kinship.end(), [](const Relation& a, const Relation& b) {
        if (a.kind != b.kind) return static_cast<int>(a.kind) < static_cast<int>(b.kind);
        if (a.receiver != b.receiver) return a.receiver < b.receiver;
        return a.sender < b.sender;
    });
    (void)first_root;
    return h;
}

std::vector<int> kin(const HierarchyGraph& h, int node, Kin kind) {
    if (node < 0 || node >= h.node_count()) throw std::invalid_argument("kin: unknown node id");
    std::vector<int> out;
    switch (kind) {
        case Kin::Siblings: {
            for (const Relation& r : h.kinship)
                if (r.kind == RelKind::WithinSibling && r.receiver == node)
                    out.push_back(r.sender);
            break;
        }
        case Kin::Ancestors: {
            for (int a = h.parent[node]; a >= 0; a = h.parent[a]) out.push_back(a);
            break;
        }
        case Kin::Parent: {
            if (h.parent[node] >= 0) out.push_back(h.parent[node]);
            break;
        }
        case Kin::Descendants: {
            std::deque<int> q{node};
            while (!q.empty()) {
                const int u = q.front();
                q.pop_front();
                for (int c : h.children[u]) {
                    out.push_back(c);
                    q.push_back(c);
                }
            }
            break;
        }
        case Kin::Leaves: {
            const auto ls = h.leaves_of(node);
            out.assign(ls.begin(), ls.end());
            break;
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

void aggregate_states(const HierarchyGraph& h, std::span<const Vec3> leaf_pos,
                      std::span<const Vec3> leaf_vel, std::vector<Vec3>& node_pos,
                      std::vector<Vec3>& node_vel) {
    if (static_cast<int>(leaf_pos.size()) != h.leaf_count ||
        static_cast<int>(leaf_vel.size()) != h.leaf_count)
        throw std::invalid_argument("aggregate_states: leaf array size mismatch");
    const int n = h.node_count();
    node_pos.assign(n, Vec3{});
    node_vel.assign(n, Vec3{});
    for (int i = 0; i < h.leaf_count; ++i) {
        node_pos[i] = leaf_pos[i];
        node_vel[i] = leaf_vel[i];
    }
    for (int i = h.leaf_count; i < n; ++i) {
        const auto ls = h.leaves_of(i);
        Vec3 p{}, v{};
        for (int l : ls) {
            p += leaf_pos[l];
            v += leaf_vel[l];
        }
        const double inv = 1.0 / static_cast<double>(ls.size());
        node_pos[i] = p * inv;
        node_vel[i] = v * inv;
    }
}

}  // namespace hrn
