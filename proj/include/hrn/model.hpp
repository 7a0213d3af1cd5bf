#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hrn/adam.hpp"
#include "hrn/graph.hpp"
#include "hrn/mlp.hpp"
#include "hrn/tape.hpp"
#include "hrn/vec3.hpp"

namespace hrn::model {

enum class Variant { Hrn, FlatGraph, MlpBaseline };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct ModelConfig {
    Variant variant = Variant::Hrn;
    int history = 2;                  // input frames (t-T, t]
    double collision_radius = -1.0;   // D_C; <= 0 means 1.5 * lattice spacing at train time
    int effect_dim = 32;              // E
    bool self_collisions = false;     // cloth: intra-object pairs too
    bool no_force_encoder = false;    // ablations
    bool no_collision_encoder = false;
    bool no_history_encoder = false;
    std::vector<int> hidden = {64, 64};           // effect MLPs
    std::vector<int> decoder_hidden = {64, 64, 64};
    std::vector<int> baseline_hidden = {256, 256};
    int material_dim = 1;
    int baseline_particles = 0;  // fixed leaf count for the MLP baseline
    double dt = 1.0 / 60.0;      // converts per-step deltas to m/s features

    void validate() const;
};

// One prediction step's inputs: per-frame leaf states (oldest first, last
// entry is frame t), scripted forces per frame, gravity in m/s^2.
struct StepInput {
    const HierarchyGraph* hierarchy = nullptr;
    std::vector<std::vector<Vec3>> pos;    // history x N_L
    std::vector<std::vector<Vec3>> vel;    // per-step displacements
    std::vector<std::vector<Vec3>> force;  // history x N_L; back() acts at frame t
    Vec3 gravity{0, -9.81, 0};
    // Scene material edges; used for self-collision exclusion and flat-graph
    // pair materials. Optional.
    const std::vector<Relation>* material_relations = nullptr;

    const std::vector<Vec3>& current_force() const { return force.back(); }
};

struct StepOutput {
    std::vector<Vec3> local_delta;  // per node, parent-relative (roots: global)
    std::vector<Vec3> world_delta;  // per node
    std::vector<Vec3> next_pos;     // per leaf
    std::vector<Vec3> next_vel;     // per leaf, equals world delta
};

// Dynamic collision relations: ordered leaf pairs of different objects closer
// than `radius` at frame t (both directions). With self_collisions, also
// intra-object pairs not already joined by a material relation. Sorted by
// (receiver, sender); built on a uniform grid of cell size `radius`.
std::vector<Relation> collision_pairs(std::span<const Vec3> pos, std::span<const int> object_id,
                                      double radius, bool self_collisions,
                                      const std::vector<Relation>* material_relations,
                                      int material_dim);

// Per-node input features (one frame): [position relative to object root (3),
// velocity in m/s (3), log10 mass (1), level (1)].
inline constexpr int kNodeFeatureDim = 8;

struct FeatureSet {
    int node_count = 0;
    int leaf_count = 0;
    std::vector<Tensor2> node_feat;    // per history frame, M x 8
    Tensor2 force_dv;                  // N_L x 3, f*dt/m
    Tensor2 gravity_rows;              // M x 3, g*dt on roots, zero elsewhere
    std::vector<Vec3> node_pos;        // current frame, aggregated, M
    std::vector<Vec3> node_vel_step;   // current frame per-step delta, M
    std::vector<Relation> collisions;  // pairs at frame t
};

FeatureSet build_features(const StepInput& in, const ModelConfig& cfg);

// Static per-hierarchy gather/reduce plans, reusable across samples.
struct HierPlans {
    std::shared_ptr<const ad::RowMap> l2a_send, l2a_recv;
    std::shared_ptr<const ad::RowMap> ws_send, ws_recv;  // without collision edges
    std::shared_ptr<const ad::RowMap> a2d_send, a2d_recv;
    std::vector<int> l2a_s, l2a_r, ws_s, ws_r, a2d_s, a2d_r;  // edge endpoints, sorted
    Tensor2 l2a_mat, ws_mat, a2d_mat;                         // edge materials
    std::shared_ptr<const ad::RowMap> closure_send, closure_recv;  // ancestor-or-self
    std::shared_ptr<const ad::RowMap> leaf_pad;     // leaf rows -> M rows
    std::shared_ptr<const ad::RowMap> parent_or_self;
    Tensor2 parent_mask;                            // M x 1, 0 on roots
    std::shared_ptr<const ad::RowMap> leaf_gather;  // node leaves CSR as gather
    std::shared_ptr<const ad::RowMap> leaf_segsum;
    Tensor2 leaf_inv_count;                         // M x 1

    static HierPlans build(const HierarchyGraph& h);
};

// Forward pass recorded on a tape; node ids exposed for loss composition.
struct TapeStep {
    ad::Tape tape;
    ParamBinder binder;
    int local_delta = -1;  // M x 3
    int world_delta = -1;  // M x 3
    FeatureSet features;

    explicit TapeStep(const ParamStore& ps) : binder(ps) {}
};

// World deltas from parent-relative ones: each node adds every ancestor's
// local delta to its own.
std::vector<Vec3> local_to_world(const HierarchyGraph& h, std::span<const Vec3> local);

class HrnModel {
public:
    HrnModel() = default;
    static HrnModel init(const ModelConfig& cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    ModelConfig& config() { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    // Records the full forward pass. Plans may be shared across calls for the
    // same hierarchy; pass nullptr to build them ad hoc.
    std::unique_ptr<TapeStep> build_step(const StepInput& in, const HierPlans* plans) const;

    StepOutput step(const StepInput& in) const;

    // Three-stage propagation alone: input effects e0 (M x E, leaf rows
    // carry the encoder sums) to total per-node effects.
    Tensor2 propagate(const StepInput& in, const Tensor2& e0) const;

    // Single-element conveniences mirroring the per-pair contracts; these
    // validate node kinds and delegate to the batched path.
    std::vector<double> force_effect_single(const StepInput& in, int leaf) const;
    std::vector<double> collision_effect_single(const StepInput& in, const Relation& rel) const;
    std::vector<double> history_effect_single(const StepInput& in, int leaf) const;
    std::vector<double> decode_motion_single(const StepInput& in, int node,
                                             std::span<const double> effect) const;

    MlpSpec force_spec() const;
    MlpSpec collision_spec() const;
    MlpSpec history_spec() const;
    MlpSpec stage_spec() const;
    MlpSpec decoder_spec() const;
    MlpSpec flat_spec() const;
    MlpSpec baseline_spec() const;

private:
    void validate_input(const StepInput& in) const;
    int eta_feature_dim() const { return kNodeFeatureDim + (no_force_in_eta() ? 3 : 0); }
    bool no_force_in_eta() const { return cfg_.no_force_encoder; }

    ModelConfig cfg_;
    ParamStore params_;
};

}  // namespace hrn::model
