#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hrn/graph.hpp"
#include "hrn/vec3.hpp"

namespace hrn::sim {

enum class ShapeKind { Cube, Cuboid, Sphere, Plane, Slope, Stairs, ClothSheet };

ShapeKind shape_kind_from_string(const std::string& s);
std::string to_string(ShapeKind k);

struct ShapeSpec {
    ShapeKind kind = ShapeKind::Cube;
    Vec3 extent{1, 1, 1};     // meters
    double spacing = 0.5;     // lattice pitch, meters
    double stiffness = 1.0;   // (0, 1]; 1.0 = rigid
    double mass_total = 1.0;  // kg

    void validate() const;
};

// Samples the shape volume on a regular lattice of pitch `spacing`, centered
// on the origin, and connects lattice neighbors within 1.8*spacing with
// material[0] = stiffness. Returns a single-object SceneGraph.
SceneGraph gen_shape(const ShapeSpec& spec, std::uint64_t seed);

// Appends `fragment` to `scene` as a new object, offsetting positions by
// `offset` and velocities by `velocity`.
void place_shape(SceneGraph& scene, const SceneGraph& fragment, const Vec3& offset,
                 const Vec3& velocity = {});

struct Spring {
    int i = -1, j = -1;
    double rest = 1.0;
    double stiffness = 1.0;
};

// Analytic static surface used for contact projection. Heights are evaluated
// at (x, z); `top_y` is the y of the lattice's highest layer.
struct SurfaceDesc {
    ShapeKind kind = ShapeKind::Plane;
    Vec3 extent{10, 0, 10};
    double top_y = 0.0;
    double height_at(double x, double z) const;
    Vec3 normal_at(double x, double z) const;
};

struct SimParams {
    double dt = 1.0 / 60.0;  // recorded frame step
    int substeps = 16;
    double spring_unit_k = 2000.0;   // N/m at stiffness 1.0
    double spring_damping = 2.0;     // N*s/m, pairwise dashpot
    double restitution = 0.4;        // surface contact
    double surface_friction = 0.25;  // tangential velocity retention per contact
    double contact_k = 2000.0;       // object-object penalty stiffness
    double contact_damping = 4.0;
    double contact_tangent_damping = 0.5;
};

// Velocities here are true velocities in m/s (trajectory files store per-step
// displacements instead).
struct SimState {
    std::vector<Particle> particles;
    std::vector<Spring> springs;
    std::vector<char> static_mask;
    std::vector<int> object_id;
    std::vector<double> radius;  // per-particle contact radius
    Vec3 gravity{0, -9.81, 0};   // m/s^2
    std::optional<SurfaceDesc> surface;
};

struct StepStats {
    int surface_contacts = 0;
    int pair_contacts = 0;
    double ke_before_projection = 0.0;
    double ke_after_projection = 0.0;
    double max_penetration = 0.0;  // below surface, after the step
};

// One symplectic Euler step: accumulate forces (applied, gravity, springs,
// object-object penalties), update velocities then positions, then project
// surface penetrations with restitution on the normal component. Static
// particles never move. Pure function of its inputs.
SimState step(const SimState& state, double dt, std::span<const Vec3> forces,
              const SimParams& params, StepStats* stats = nullptr);

struct Frame {
    std::vector<Vec3> pos;
    std::vector<Vec3> vel;  // per-step displacement x_t - x_{t-1}
    std::vector<Vec3> force;
};

struct TrajectoryHeader {
    std::string scenario;
    std::uint64_t seed = 0;
    double dt = 1.0 / 60.0;
    Vec3 gravity{0, -9.81, 0};
    double spacing = 0.5;  // smallest dynamic-object lattice pitch
    SceneGraph scene;      // initial leaf states and material relations
    HierarchyGraph hierarchy;
    std::vector<char> static_mask;
    std::vector<int> resets;  // frames produced by a teleport
};

struct Trajectory {
    TrajectoryHeader header;
    std::vector<Frame> frames;

    int particle_count() const { return header.scene.particle_count(); }
    int frame_count() const { return static_cast<int>(frames.size()); }
};

struct ScenarioConfig {
    std::string name = "throw-one";
    int n_frames = 200;
    std::vector<ShapeSpec> objects;  // dynamic objects; defaults filled per scenario
    ShapeSpec surface;               // static surface (plane unless overridden)
    bool with_surface = true;
    Vec3 gravity{0, -9.81, 0};
    SimParams sim;
    HierarchyConfig hierarchy;
    double force_scale = 1.0;    // 0 disables scripted impulses
    double initial_speed = 0.5;  // m/s, zero-g drift scale
    int force_interval_min = 25;
    int force_interval_max = 50;
    bool soft = false;  // per-trajectory random stiffness in [0.1, 0.9]
    double bounds = 6.0;
    double spawn_height = 0.8;
    int tower_cubes = 5;

    void apply_scenario_defaults();  // fills objects/surface for the named scenario
};

// Known scenario names: throw-one, zero-g-collide, multi-on-plane,
// cloth-drop, cloth-hang, tower. Deterministic per seed.
Trajectory gen_scenario(const ScenarioConfig& cfg, std::uint64_t seed);

}  // namespace hrn::sim
