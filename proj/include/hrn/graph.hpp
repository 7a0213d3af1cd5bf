#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hrn/vec3.hpp"

namespace hrn {

// Point-mass state of one node: position (m), velocity (per-step
// displacement, m), mass (kg).
struct Particle {
    Vec3 position;
    Vec3 velocity;
    double mass = 1.0;
};

enum class RelKind : int {
    WithinSibling = 0,
    LeafToAncestor = 1,
    AncestorToDescendant = 2,
    Collision = 3,
};

// Directed pairwise relation. material[0] is the stiffness channel;
// collision relations carry an all-zero material vector.
struct Relation {
    int sender = -1;
    int receiver = -1;
    RelKind kind = RelKind::WithinSibling;
    std::vector<double> material;
};

// Leaf-level scene: particles plus intra-object material edges. Objects are
// the connected components; relations never cross objects.
struct SceneGraph {
    std::vector<Particle> particles;
    std::vector<Relation> relations;
    std::vector<int> object_id;

    int particle_count() const { return static_cast<int>(particles.size()); }
    int object_count() const;
    void validate() const;  // throws std::invalid_argument on violations
};

struct HierarchyConfig {
    int cluster_size = 8;  // target subcomponents per split, >= 2
    int kmeans_iters = 50;
    std::uint64_t seed = 0;
};

enum class Kin { Siblings, Ancestors, Parent, Descendants, Leaves };

// Hierarchical scene digraph. Node ids: leaves first (scene order), then
// intermediate nodes, then one root per object at the tail. Immutable after
// construction; all queries are const.
struct HierarchyGraph {
    std::vector<Particle> nodes;  // states at construction time
    std::vector<int> level;       // 0 = leaf; internal = 1 + max child level
    std::vector<int> parent;      // -1 for roots
    std::vector<int> object_id;
    std::vector<Relation> kinship;  // sorted by (kind, receiver, sender)
    std::vector<std::vector<double>> node_material;
    int leaf_count = 0;
    int material_dim = 1;

    // Derived, filled by build_hierarchy.
    std::vector<std::vector<int>> children;
    std::vector<int> leaves_offsets;  // CSR node -> leaf ids (ascending)
    std::vector<int> leaves_list;
    std::vector<int> roots;  // one per object, ascending object id

    int node_count() const { return static_cast<int>(nodes.size()); }
    bool is_leaf(int id) const { return id < leaf_count; }
    bool is_root(int id) const { return parent[id] < 0; }
    std::span<const int> leaves_of(int id) const {
        return {leaves_list.data() + leaves_offsets[id],
                static_cast<size_t>(leaves_offsets[id + 1] - leaves_offsets[id])};
    }
};

// Lloyd iterations with farthest-point seeding from a seeded RNG. Empty
// clusters are re-seeded with the point farthest from its assigned centroid.
// Deterministic for a fixed seed; ties break toward the lowest index.
std::vector<int> kmeans_cluster(const std::vector<Vec3>& points, int k, std::uint64_t seed,
                                int max_iters = 50);

// Unweighted mean position/velocity, summed mass.
Particle aggregate_node(std::span<const Particle> children);

// Builds the hierarchy by iterative grouping: one root per object, recursive
// k-means splits into at most cluster_size subcomponents, L2A/WS/A2D kinship
// edges. Throws std::invalid_argument if an object is disconnected.
HierarchyGraph build_hierarchy(const SceneGraph& scene, const HierarchyConfig& cfg);

// Kinship query; results sorted ascending. Parent of a root is empty.
std::vector<int> kin(const HierarchyGraph& h, int node, Kin kind);

// Re-aggregates internal-node states from current leaf states (mean position,
// mean velocity; masses are construction-time constants). `leaf_pos/vel` are
// leaf-indexed; the result is node-indexed.
void aggregate_states(const HierarchyGraph& h, std::span<const Vec3> leaf_pos,
                      std::span<const Vec3> leaf_vel, std::vector<Vec3>& node_pos,
                      std::vector<Vec3>& node_vel);

}  // namespace hrn
