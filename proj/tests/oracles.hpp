#pragma once

#include <array>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "hrn/graph.hpp"
#include "hrn/sim.hpp"

// Independent test oracles. These re-implement the contracts under test from
// scratch (no shared code with the library paths they check).
namespace oracle {

// Lloyd iterations with the library's documented seeding contract: first
// center uniform over a seeded mt19937_64, then farthest-point; ties to the
// lowest index; empty clusters re-seeded with the point farthest from its
// assigned centroid.
std::vector<int> lloyd_kmeans(const std::vector<hrn::Vec3>& pts, int k, std::uint64_t seed,
                              int iters);

// Numbering-independent node identity: (is_internal, sorted leaf set).
using NodeKey = std::pair<bool, std::vector<int>>;
// Edge identity: (relation kind, sender key, receiver key).
using EdgeKey = std::tuple<int, NodeKey, NodeKey>;

struct GroupingOracle {
    std::set<EdgeKey> edges;
    std::set<NodeKey> nodes;
    int node_count = 0;
};

// Walks the iterative grouping algorithm directly: root per object, BFS
// splits into cluster_size subcomponents (one k-means sub-seed drawn from
// mt19937_64(seed) per actual split), L2A/A2D wiring, sibling cliques.
GroupingOracle walk_grouping(const hrn::SceneGraph& scene, int cluster_size, std::uint64_t seed,
                             int kmeans_iters);

// The same canonical form extracted from a built hierarchy.
GroupingOracle canonicalize(const hrn::HierarchyGraph& h);

// Random connected lattice blob of n cells (unit spacing), as one object.
hrn::SceneGraph random_blob(int n, std::uint64_t seed, double stiffness = 1.0);

}  // namespace oracle
