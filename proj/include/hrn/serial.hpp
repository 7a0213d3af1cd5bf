#pragma once

#include <span>
#include <string>
#include <vector>

#include "hrn/graph.hpp"
#include "hrn/mlp.hpp"
#include "hrn/model.hpp"
#include "hrn/sim.hpp"
#include "hrn/tensor.hpp"

// Serial reference implementations, independent of the tape/OpenMP kernels.
// They serve as test oracles and as the baseline side of the benchmark. Row
// accumulation follows the documented order (ascending input index, ascending
// (receiver, sender) per stage), so results match the parallel kernels
// bitwise.
namespace hrn::serial {

// Straight-line MLP evaluation on a single row.
std::vector<double> mlp_eval_row(const ParamStore& ps, const std::string& prefix,
                                 const MlpSpec& spec, std::span<const double> input);

// Plain i-k-j matmul, single thread.
Tensor2 matmul(const Tensor2& a, const Tensor2& b);

// O(n^2) collision pair scan; same contract as model::collision_pairs.
std::vector<Relation> collision_pairs_brute(std::span<const Vec3> pos,
                                            std::span<const int> object_id, double radius,
                                            bool self_collisions,
                                            const std::vector<Relation>* material_relations,
                                            int material_dim);

// Three-stage propagation as an explicit triple loop over edge sets derived
// from parent pointers alone (sibling cliques are the children sets of each
// internal node). Evaluates the shared stage MLP one edge at a time.
Tensor2 propagate_reference(const HierarchyGraph& h, const Tensor2& eta_features,
                            const std::vector<Vec3>& node_pos, const Tensor2& e0,
                            const ParamStore& params, const MlpSpec& stage_spec,
                            int material_dim);

// Single pairwise convolution over the fully connected leaf graph; oracle for
// the flat-graph variant's propagation.
Tensor2 flat_propagate_reference(const HierarchyGraph& h, const Tensor2& leaf_features,
                                 const std::vector<Vec3>& leaf_pos, const Tensor2& e0_leaf,
                                 const std::vector<Relation>* material_relations,
                                 const ParamStore& params, const MlpSpec& flat_spec,
                                 int material_dim);

// Spring-major serial physics step; physically identical to sim::step up to
// floating-point summation order.
sim::SimState sim_step_reference(const sim::SimState& state, double dt,
                                 std::span<const Vec3> forces, const sim::SimParams& params);

}  // namespace hrn::serial
