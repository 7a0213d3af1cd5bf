#include "hrn/sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <unordered_map>

#include "hrn/parallel.hpp"

namespace hrn::sim {

ShapeKind shape_kind_from_string(const std::string& s) {
    if (s == "cube") return ShapeKind::Cube;
    if (s == "cuboid") return ShapeKind::Cuboid;
    if (s == "sphere") return ShapeKind::Sphere;
    if (s == "plane") return ShapeKind::Plane;
    if (s == "slope") return ShapeKind::Slope;
    if (s == "stairs") return ShapeKind::Stairs;
    if (s == "cloth-sheet") return ShapeKind::ClothSheet;
    throw std::invalid_argument("unknown shape kind: " + s);
}

std::string to_string(ShapeKind k) {
    switch (k) {
        case ShapeKind::Cube: return "cube";
        case ShapeKind::Cuboid: return "cuboid";
        case ShapeKind::Sphere: return "sphere";
        case ShapeKind::Plane: return "plane";
        case ShapeKind::Slope: return "slope";
        case ShapeKind::Stairs: return "stairs";
        case ShapeKind::ClothSheet: return "cloth-sheet";
    }
    return "?";
}

void ShapeSpec::validate() const {
    if (!(spacing > 0.0)) throw std::invalid_argument("ShapeSpec: spacing must be positive");
    if (!(mass_total > 0.0)) throw std::invalid_argument("ShapeSpec: mass_total must be positive");
    if (!(stiffness > 0.0) || stiffness > 1.0)
        throw std::invalid_argument("ShapeSpec: stiffness must be in (0, 1]");
    double min_pos = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a)
        if (extent[a] > 0.0) min_pos = std::min(min_pos, extent[a]);
    if (std::isfinite(min_pos) && spacing > min_pos + 1e-12)
        throw std::invalid_argument("ShapeSpec: spacing exceeds smallest positive extent");
}

namespace {

int axis_count(double extent, double spacing) {
    return static_cast<int>(std::floor(extent / spacing + 1e-9)) + 1;
}

constexpr double kStaticMass = 1e6;  // "practically infinite" sentinel, kept finite

}  // namespace

SceneGraph gen_shape(const ShapeSpec& spec, std::uint64_t seed) {
    (void)seed;  // lattice sampling is deterministic; kept for interface stability
    spec.validate();
    const double s = spec.spacing;
    const bool planar = spec.kind == ShapeKind::Plane || spec.kind == ShapeKind::Slope ||
                        spec.kind == ShapeKind::Stairs || spec.kind == ShapeKind::ClothSheet;
    const int nx = axis_count(spec.extent.x, s);
    const int ny = planar ? 1 : axis_count(spec.extent.y, s);
    const int nz = axis_count(spec.extent.z, s);
    const double x0 = -0.5 * (nx - 1) * s;
    const double y0 = -0.5 * (ny - 1) * s;
    const double z0 = -0.5 * (nz - 1) * s;

    std::vector<Vec3> pts;
    for (int ix = 0; ix < nx; ++ix) {
        for (int iy = 0; iy < ny; ++iy) {
            for (int iz = 0; iz < nz; ++iz) {
                Vec3 p{x0 + ix * s, y0 + iy * s, z0 + iz * s};
                switch (spec.kind) {
                    case ShapeKind::Cube:
                    case ShapeKind::Cuboid:
                        break;
                    case ShapeKind::Sphere: {
                        const double r = 0.5 * spec.extent.x;
                        if (p.norm() > r + 1e-9) continue;
                        break;
                    }
                    case ShapeKind::Plane:
                    case ShapeKind::ClothSheet:
                        p.y = 0.0;
                        break;
                    case ShapeKind::Slope: {
                        const double run = std::max(spec.extent.x, 1e-12);
                        p.y = (p.x - x0) * (spec.extent.y / run);
                        break;
                    }
                    case ShapeKind::Stairs: {
                        const double step_w = std::max(spec.extent.x / 4.0, 1e-12);
                        int k = static_cast<int>(std::floor((p.x - x0) / step_w + 1e-9));
                        k = std::clamp(k, 0, 3);
                        p.y = k * (spec.extent.y / 4.0);
                        break;
                    }
                }
                pts.push_back(p);
            }
        }
    }
    if (pts.empty()) throw std::invalid_argument("gen_shape: shape yields zero particles");

    SceneGraph g;
    const int n = static_cast<int>(pts.size());
    const double mass = spec.mass_total / n;
    g.particles.resize(n);
    g.object_id.assign(n, 0);
    for (int i = 0; i < n; ++i) {
        g.particles[i].position = pts[i];
        g.particles[i].velocity = Vec3{};
        g.particles[i].mass = mass;
    }
    const double reach2 = (1.8 * s) * (1.8 * s);
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            if ((pts[i] - pts[j]).norm2() <= reach2) {
                g.relations.push_back({i, j, RelKind::WithinSibling, {spec.stiffness}});
                g.relations.push_back({j, i, RelKind::WithinSibling, {spec.stiffness}});
            }
        }
    }
    return g;
}

void place_shape(SceneGraph& scene, const SceneGraph& fragment, const Vec3& offset,
                 const Vec3& velocity) {
    const int base = scene.particle_count();
    const int obj = scene.object_count();
    for (const Particle& p : fragment.particles) {
        Particle q = p;
        q.position += offset;
        q.velocity += velocity;
        scene.particles.push_back(q);
        scene.object_id.push_back(obj);
    }
    for (const Relation& r : fragment.relations) {
        Relation q = r;
        q.sender += base;
        q.receiver += base;
        scene.relations.push_back(std::move(q));
    }
}

double SurfaceDesc::height_at(double x, double z) const {
    if (std::abs(x) > 0.5 * extent.x + 1e-9 || std::abs(z) > 0.5 * extent.z + 1e-9)
        return -std::numeric_limits<double>::infinity();
    switch (kind) {
        case ShapeKind::Plane:
            return top_y;
        case ShapeKind::Slope: {
            const double run = std::max(extent.x, 1e-12);
            return top_y + (x + 0.5 * extent.x) * (extent.y / run);
        }
        case ShapeKind::Stairs: {
            const double step_w = std::max(extent.x / 4.0, 1e-12);
            int k = static_cast<int>(std::floor((x + 0.5 * extent.x) / step_w));
            k = std::clamp(k, 0, 3);
            return top_y + k * (extent.y / 4.0);
        }
        default:
            return top_y;
    }
}

Vec3 SurfaceDesc::normal_at(double x, double z) const {
    (void)x;
    (void)z;
    if (kind == ShapeKind::Slope) {
        const double run = std::max(extent.x, 1e-12);
        const double slope = extent.y / run;
        Vec3 n{-slope, 1.0, 0.0};
        return n / n.norm();
    }
    return Vec3{0, 1, 0};
}

namespace {

std::int64_t cell_key(int cx, int cy, int cz) {
    // 21 bits per axis, offset to keep coordinates positive
    const std::int64_t bias = 1 << 20;
    return (((cx + bias) & 0x1FFFFF) << 42) | ((static_cast<std::int64_t>(cy + bias) & 0x1FFFFF) << 21) |
           (static_cast<std::int64_t>(cz + bias) & 0x1FFFFF);
}

}  // namespace

SimState step(const SimState& state, double dt, std::span<const Vec3> forces,
              const SimParams& params, StepStats* stats) {
    const int n = static_cast<int>(state.particles.size());
    if (!(dt > 0.0)) throw std::invalid_argument("sim::step: dt must be positive");
    if (static_cast<int>(forces.size()) != n)
        throw std::invalid_argument("sim::step: force count mismatch");
    for (const Vec3& f : forces)
        if (!f.finite()) throw std::invalid_argument("sim::step: non-finite force");
    for (const Particle& p : state.particles)
        if (!p.position.finite() || !p.velocity.finite())
            throw std::invalid_argument("sim::step: non-finite particle state");

    // Spring CSR: per-particle incident springs so each particle accumulates
    // its own forces in a fixed order regardless of thread count.
    std::vector<int> spring_off(n + 1, 0), spring_idx;
    {
        for (const Spring& sp : state.springs) {
            spring_off[sp.i + 1]++;
            spring_off[sp.j + 1]++;
        }
        for (int i = 0; i < n; ++i) spring_off[i + 1] += spring_off[i];
        spring_idx.resize(spring_off.back());
        std::vector<int> cur(spring_off.begin(), spring_off.end() - 1);
        for (int s = 0; s < static_cast<int>(state.springs.size()); ++s) {
            spring_idx[cur[state.springs[s].i]++] = s;
            spring_idx[cur[state.springs[s].j]++] = s;
        }
    }

    // Contact candidates between dynamic particles of different objects.
    std::vector<std::vector<int>> contact_cand(n);
    bool any_pairs = false;
    {
        int dyn_objects = 0;
        std::vector<char> seen_obj;
        for (int i = 0; i < n; ++i) {
            if (state.static_mask[i]) continue;
            const int o = state.object_id[i];
            if (o >= static_cast<int>(seen_obj.size())) seen_obj.resize(o + 1, 0);
            if (!seen_obj[o]) {
                seen_obj[o] = 1;
                dyn_objects++;
            }
        }
        any_pairs = dyn_objects > 1;
    }
    if (any_pairs) {
        double max_r = 0.0;
        for (int i = 0; i < n; ++i)
            if (!state.static_mask[i]) max_r = std::max(max_r, state.radius[i]);
        const double cell = std::max(2.0 * max_r, 1e-6);
        std::unordered_map<std::int64_t, std::vector<int>> grid;
        grid.reserve(static_cast<size_t>(n) * 2);
        auto cell_of = [&](const Vec3& p) {
            return std::array<int, 3>{static_cast<int>(std::floor(p.x / cell)),
                                      static_cast<int>(std::floor(p.y / cell)),
                                      static_cast<int>(std::floor(p.z / cell))};
        };
        for (int i = 0; i < n; ++i) {
            if (state.static_mask[i]) continue;
            auto c = cell_of(state.particles[i].position);
            grid[cell_key(c[0], c[1], c[2])].push_back(i);
        }
        par::parallel_for(n, [&](std::int64_t ii) {
            const int i = static_cast<int>(ii);
            if (state.static_mask[i]) return;
            const Vec3& xi = state.particles[i].position;
            auto c = cell_of(xi);
            auto& cand = contact_cand[i];
            for (int dx = -1; dx <= 1; ++dx)
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dz = -1; dz <= 1; ++dz) {
                        auto it = grid.find(cell_key(c[0] + dx, c[1] + dy, c[2] + dz));
                        if (it == grid.end()) continue;
                        for (int j : it->second) {
                            if (j == i || state.object_id[j] == state.object_id[i]) continue;
                            const double reach = state.radius[i] + state.radius[j];
                            if ((xi - state.particles[j].position).norm2() < reach * reach)
                                cand.push_back(j);
                        }
                    }
            std::sort(cand.begin(), cand.end());
        });
    }

    SimState out = state;
    std::vector<Vec3> accel(n);
    par::parallel_for(n, [&](std::int64_t ii) {
        const int i = static_cast<int>(ii);
        if (state.static_mask[i]) return;
        const Particle& pi = state.particles[i];
        Vec3 f = forces[i] + state.gravity * pi.mass;
        for (int e = spring_off[i]; e < spring_off[i + 1]; ++e) {
            const Spring& sp = state.springs[spring_idx[e]];
            const int j = sp.i == i ? sp.j : sp.i;
            const Particle& pj = state.particles[j];
            const Vec3 d = pj.position - pi.position;
            const double len = d.norm();
            if (len <= 1e-12) continue;
            const Vec3 dir = d / len;
            const double stretch = len - sp.rest;
            const double vrel = (pj.velocity - pi.velocity).dot(dir);
            const double mag = params.spring_unit_k * sp.stiffness * stretch +
                               params.spring_damping * vrel;
            f += dir * mag;
        }
        for (int j : contact_cand[i]) {
            const Particle& pj = state.particles[j];
            const Vec3 d = pi.position - pj.position;
            const double len = d.norm();
            const double reach = state.radius[i] + state.radius[j];
            if (len <= 1e-12 || len >= reach) continue;
            const Vec3 nrm = d / len;
            double mag = params.contact_k * (reach - len);
            const Vec3 vrel = pi.velocity - pj.velocity;
            const double vn = vrel.dot(nrm);
            if (vn < 0.0) mag -= params.contact_damping * vn;
            f += nrm * mag;
            const Vec3 vt = vrel - nrm * vn;
            f -= vt * params.contact_tangent_damping;
        }
        accel[i] = f / pi.mass;
    });

    for (int i = 0; i < n; ++i) {
        if (state.static_mask[i]) {
            out.particles[i].velocity = Vec3{};
            continue;
        }
        out.particles[i].velocity += accel[i] * dt;
        out.particles[i].position += out.particles[i].velocity * dt;
    }

    if (stats) {
        stats->surface_contacts = 0;
        stats->pair_contacts = 0;
        for (int i = 0; i < n; ++i) stats->pair_contacts += static_cast<int>(contact_cand[i].size());
        stats->ke_before_projection = 0.0;
        for (int i = 0; i < n; ++i)
            if (!state.static_mask[i])
                stats->ke_before_projection +=
                    0.5 * out.particles[i].mass * out.particles[i].velocity.norm2();
    }

    if (state.surface.has_value()) {
        const SurfaceDesc& surf = *state.surface;
        for (int i = 0; i < n; ++i) {
            if (state.static_mask[i]) continue;
            Particle& p = out.particles[i];
            const double h = surf.height_at(p.position.x, p.position.z);
            if (!std::isfinite(h)) continue;
            const double target = h + state.radius[i];
            if (p.position.y >= target) continue;
            p.position.y = target;
            const Vec3 nrm = surf.normal_at(p.position.x, p.position.z);
            const double vn = p.velocity.dot(nrm);
            Vec3 vt = p.velocity - nrm * vn;
            vt *= (1.0 - params.surface_friction);
            const double vn_out = vn < 0.0 ? -params.restitution * vn : vn;
            p.velocity = vt + nrm * vn_out;
            if (stats) stats->surface_contacts++;
        }
    }

    if (stats) {
        stats->ke_after_projection = 0.0;
        stats->max_penetration = 0.0;
        for (int i = 0; i < n; ++i) {
            if (state.static_mask[i]) continue;
            stats->ke_after_projection +=
                0.5 * out.particles[i].mass * out.particles[i].velocity.norm2();
            if (state.surface.has_value()) {
                const double h = state.surface->height_at(out.particles[i].position.x,
                                                          out.particles[i].position.z);
                if (std::isfinite(h))
                    stats->max_penetration =
                        std::max(stats->max_penetration, h - out.particles[i].position.y);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Scenario generation
// ---------------------------------------------------------------------------

namespace {

ShapeSpec default_cube() {
    ShapeSpec s;
    s.kind = ShapeKind::Cube;
    s.extent = {1, 1, 1};
    s.spacing = 0.5;
    s.stiffness = 1.0;
    s.mass_total = 1.0;
    return s;
}

ShapeSpec default_plane() {
    ShapeSpec s;
    s.kind = ShapeKind::Plane;
    s.extent = {10, 0, 10};
    s.spacing = 1.0;
    s.stiffness = 1.0;
    s.mass_total = 1.0;
    return s;
}

ShapeSpec default_cloth() {
    ShapeSpec s;
    s.kind = ShapeKind::ClothSheet;
    s.extent = {1.5, 0, 1.5};
    s.spacing = 0.25;
    s.stiffness = 0.3;
    s.mass_total = 0.5;
    return s;
}

ShapeSpec small_cube() {
    ShapeSpec s;
    s.kind = ShapeKind::Cube;
    s.extent = {0.5, 0.5, 0.5};
    s.spacing = 0.5;
    s.stiffness = 1.0;
    s.mass_total = 1.0;
    return s;
}

struct ObjectSlot {
    SceneGraph fragment;       // local coordinates, rest shape
    int first = 0, count = 0;  // leaf range in the scene
    double spacing = 0.5;
    double mass = 0.0;
    double min_y = 0.0, max_y = 0.0;
};

Vec3 centroid(const std::vector<Particle>& ps, int first, int count) {
    Vec3 c{};
    for (int i = first; i < first + count; ++i) c += ps[i].position;
    return c / static_cast<double>(count);
}

}  // namespace

void ScenarioConfig::apply_scenario_defaults() {
    if (name == "throw-one") {
        if (objects.empty()) objects = {default_cube()};
    } else if (name == "zero-g-collide") {
        if (objects.empty()) objects = {default_cube(), default_cube()};
        with_surface = false;
        gravity = {0, 0, 0};
    } else if (name == "multi-on-plane") {
        if (objects.empty()) objects = {default_cube(), default_cube()};
    } else if (name == "cloth-drop") {
        if (objects.empty()) objects = {default_cloth()};
    } else if (name == "cloth-hang") {
        if (objects.empty()) objects = {default_cloth()};
        spawn_height = 1.2;
    } else if (name == "tower") {
        if (objects.empty()) objects.assign(tower_cubes, small_cube());
    } else {
        throw std::invalid_argument("gen_scenario: unknown scenario name: " + name);
    }
    if (with_surface && surface.extent.x == 0.0) surface = default_plane();
}

Trajectory gen_scenario(const ScenarioConfig& cfg_in, std::uint64_t seed) {
    ScenarioConfig cfg = cfg_in;
    if (cfg.surface.extent.x == 0.0 && cfg.with_surface) cfg.surface = default_plane();
    cfg.apply_scenario_defaults();
    if (cfg.n_frames < 2) throw std::invalid_argument("gen_scenario: n_frames >= 2");

    std::mt19937_64 rng(seed);
    auto uni = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
    auto uni_int = [&](int a, int b) { return std::uniform_int_distribution<int>(a, b)(rng); };

    const bool zero_g = cfg.name == "zero-g-collide";
    const bool tower = cfg.name == "tower";
    const bool cloth_hang = cfg.name == "cloth-hang";

    // Build object fragments (per-trajectory random stiffness for soft runs).
    std::vector<ObjectSlot> slots;
    for (ShapeSpec spec : cfg.objects) {
        if (cfg.soft) spec.stiffness = uni(0.1, 0.9);
        ObjectSlot slot;
        slot.fragment = gen_shape(spec, seed);
        slot.spacing = spec.spacing;
        slot.mass = spec.mass_total;
        slot.min_y = std::numeric_limits<double>::infinity();
        slot.max_y = -slot.min_y;
        for (const Particle& p : slot.fragment.particles) {
            slot.min_y = std::min(slot.min_y, p.position.y);
            slot.max_y = std::max(slot.max_y, p.position.y);
        }
        slots.push_back(std::move(slot));
    }

    const int n_objects = static_cast<int>(slots.size());
    std::optional<SurfaceDesc> surface;
    if (cfg.with_surface) {
        surface = SurfaceDesc{cfg.surface.kind, cfg.surface.extent, 0.0};
    }

    auto spawn_offset = [&](int k) -> Vec3 {
        const double radius_keepout = cfg.with_surface ? 0.15 * cfg.surface.extent.x : 1.0;
        if (tower) {
            // handled separately
            return Vec3{};
        }
        if (cfg.name == "zero-g-collide") {
            return Vec3{};  // handled separately
        }
        if (cfg.name == "multi-on-plane" && n_objects > 1) {
            const double ang = uni(0.0, 2.0 * 3.14159265358979323846);
            const double r = uni(0.6, 1.1);
            const double a = ang + k * 2.0 * 3.14159265358979323846 / n_objects;
            return Vec3{r * std::cos(a), 0.0, r * std::sin(a)};
        }
        return Vec3{uni(-radius_keepout, radius_keepout), 0.0, uni(-radius_keepout, radius_keepout)};
    };

    // Zero-g runs place objects along a random axis moving toward each other;
    // draw those values up front so both placements share them.
    std::vector<Vec3> zg_offset(n_objects), zg_vel(n_objects);
    if (zero_g) {
        const double ang = uni(0.0, 2.0 * 3.14159265358979323846);
        const Vec3 dir{std::cos(ang), 0.0, std::sin(ang)};
        const Vec3 perp{-dir.z, 0.0, dir.x};
        const double sep = uni(0.9, 1.3);
        const double impact = uni(-0.25, 0.25);
        for (int k = 0; k < n_objects; ++k) {
            const double side = (k % 2 == 0) ? -1.0 : 1.0;
            zg_offset[k] = dir * (side * sep) + perp * (side * impact);
            zg_vel[k] = dir * (-side * cfg.initial_speed * uni(0.4, 1.0));
        }
    }

    // Assemble the scene: dynamic objects first, then the static surface.
    SceneGraph scene;
    std::vector<Vec3> init_vel_ms;  // true velocities, m/s
    for (int k = 0; k < n_objects; ++k) {
        ObjectSlot& slot = slots[k];
        Vec3 offset;
        Vec3 vel{};
        const double rest_y = 0.45 * slot.spacing;  // contact radius above surface
        if (tower) {
            const double edge = slot.max_y - slot.min_y;
            const double gap = slot.spacing / 50.0;
            // each cube's bottom layer sits one particle diameter + gap above
            // the previous cube's top layer
            offset = Vec3{uni(-0.04, 0.04) * (edge + slot.spacing),
                          rest_y - slot.min_y + k * (edge + 2.0 * rest_y + gap),
                          uni(-0.04, 0.04) * (edge + slot.spacing)};
        } else if (zero_g) {
            offset = zg_offset[k];
            vel = zg_vel[k];
        } else {
            offset = spawn_offset(k);
            offset.y = cfg.spawn_height - slot.min_y;
            if (cloth_hang) offset.y = cfg.spawn_height;
        }
        slot.first = scene.particle_count();
        slot.count = slot.fragment.particle_count();
        place_shape(scene, slot.fragment, offset, vel * cfg.sim.dt);
        init_vel_ms.resize(scene.particle_count(), Vec3{});
        for (int i = slot.first; i < slot.first + slot.count; ++i) init_vel_ms[i] = vel;
    }
    // surface object (static)
    int surface_first = -1, surface_count = 0;
    if (cfg.with_surface) {
        SceneGraph frag = gen_shape(cfg.surface, seed);
        surface_first = scene.particle_count();
        surface_count = frag.particle_count();
        place_shape(scene, frag, Vec3{0, 0, 0});
        init_vel_ms.resize(scene.particle_count(), Vec3{});
    }

    const int n = scene.particle_count();
    std::vector<char> static_mask(n, 0);
    for (int i = surface_first; i >= 0 && i < surface_first + surface_count; ++i) {
        static_mask[i] = 1;
        scene.particles[i].mass = kStaticMass;
    }
    std::vector<int> pinned;
    if (cloth_hang) {
        // pin two adjacent corners of the first (cloth) object
        const ObjectSlot& slot = slots[0];
        const int nx = axis_count(cfg.objects[0].extent.x, cfg.objects[0].spacing);
        const int nz = axis_count(cfg.objects[0].extent.z, cfg.objects[0].spacing);
        pinned = {slot.first, slot.first + (nx - 1) * nz};
        for (int i : pinned) {
            static_mask[i] = 1;
            scene.particles[i].mass = kStaticMass;
        }
    }

    HierarchyGraph hierarchy = build_hierarchy(scene, cfg.hierarchy);

    // Sim state
    SimState st;
    st.particles = scene.particles;
    for (int i = 0; i < n; ++i) st.particles[i].velocity = init_vel_ms[i];
    st.static_mask = static_mask;
    st.object_id = scene.object_id;
    st.gravity = zero_g ? Vec3{0, 0, 0} : cfg.gravity;
    st.surface = surface;
    st.radius.assign(n, 0.0);
    for (const ObjectSlot& slot : slots)
        for (int i = slot.first; i < slot.first + slot.count; ++i)
            st.radius[i] = 0.45 * slot.spacing;
    if (surface_first >= 0)
        for (int i = surface_first; i < surface_first + surface_count; ++i)
            st.radius[i] = 0.45 * cfg.surface.spacing;
    for (const Relation& r : scene.relations) {
        if (r.sender < r.receiver) {
            const double rest =
                (scene.particles[r.sender].position - scene.particles[r.receiver].position).norm();
            st.springs.push_back({r.sender, r.receiver, rest, r.material[0]});
        }
    }

    Trajectory traj;
    traj.header.scenario = cfg.name;
    traj.header.seed = seed;
    traj.header.dt = cfg.sim.dt;
    traj.header.gravity = st.gravity;
    traj.header.scene = scene;
    traj.header.hierarchy = std::move(hierarchy);
    traj.header.static_mask = static_mask;
    double min_spacing = std::numeric_limits<double>::infinity();
    for (const ObjectSlot& slot : slots) min_spacing = std::min(min_spacing, slot.spacing);
    traj.header.spacing = min_spacing;

    // initial frame
    Frame f0;
    f0.pos.resize(n);
    f0.vel.resize(n);
    f0.force.assign(n, Vec3{});
    for (int i = 0; i < n; ++i) {
        f0.pos[i] = st.particles[i].position;
        f0.vel[i] = st.particles[i].velocity * cfg.sim.dt;
    }
    traj.frames.push_back(std::move(f0));

    // Scripted impulses
    int next_force_frame =
        cfg.force_scale > 0.0 ? uni_int(std::max(3, cfg.force_interval_min / 2),
                                        std::max(4, cfg.force_interval_max / 2))
                              : cfg.n_frames + 1;
    const double dt_sub = cfg.sim.dt / cfg.sim.substeps;

    auto object_centroid = [&](int k) {
        return centroid(st.particles, slots[k].first, slots[k].count);
    };

    auto make_impulse = [&](int frame, std::vector<Vec3>& force) {
        (void)frame;
        const int k = n_objects == 1 ? 0 : uni_int(0, n_objects - 1);
        const ObjectSlot& slot = slots[k];
        Vec3 dir;
        if (zero_g && n_objects > 1) {
            const int other = k == 0 ? 1 : 0;
            Vec3 toward = object_centroid(other) - object_centroid(k);
            const double len = toward.norm();
            dir = len > 1e-9 ? toward / len : Vec3{1, 0, 0};
            if (uni(0.0, 1.0) < 0.3) dir = -dir;  // occasionally tear apart
            dir += Vec3{uni(-0.2, 0.2), uni(-0.2, 0.2), uni(-0.2, 0.2)};
        } else if (tower || cfg.name == "multi-on-plane") {
            Vec3 lateral{uni(-1.0, 1.0), 0.0, uni(-1.0, 1.0)};
            if (cfg.name == "multi-on-plane" && n_objects > 1) {
                const int other = (k + 1) % n_objects;
                Vec3 toward = object_centroid(other) - object_centroid(k);
                toward.y = 0;
                const double len = toward.norm();
                lateral = len > 1e-9 ? toward / len : lateral;
                if (uni(0.0, 1.0) < 0.3) lateral = -lateral;
            }
            dir = lateral + Vec3{0, tower ? 0.1 : uni(0.3, 0.8), 0};
        } else {
            dir = Vec3{uni(-0.4, 0.4), 1.0, uni(-0.4, 0.4)};
        }
        const double dlen = dir.norm();
        dir = dlen > 1e-9 ? dir / dlen : Vec3{0, 1, 0};
        const double dv = uni(1.2, 3.0) * cfg.force_scale;
        const double total = slot.mass * dv / cfg.sim.dt;
        const int app = slot.first + uni_int(0, slot.count - 1);
        const Vec3 xapp = st.particles[app].position;
        const double sigma = 2.0 * slot.spacing;
        double wsum = 0.0;
        std::vector<double> w(slot.count);
        for (int i = 0; i < slot.count; ++i) {
            const double d2 = (st.particles[slot.first + i].position - xapp).norm2();
            w[i] = std::exp(-d2 / (2.0 * sigma * sigma));
            wsum += w[i];
        }
        for (int i = 0; i < slot.count; ++i)
            force[slot.first + i] += dir * (total * w[i] / wsum);
    };

    auto out_of_bounds = [&](int k) {
        const Vec3 c = object_centroid(k);
        if (cfg.with_surface) {
            const double half = 0.45 * cfg.surface.extent.x;
            return std::abs(c.x) > half || std::abs(c.z) > half || c.y < -1.0 ||
                   c.y > 2.0 * cfg.bounds;
        }
        return std::abs(c.x) > cfg.bounds || std::abs(c.y) > cfg.bounds ||
               std::abs(c.z) > cfg.bounds;
    };

    auto respawn = [&](int k) {
        ObjectSlot& slot = slots[k];
        Vec3 offset;
        Vec3 vel{};
        if (zero_g) {
            const double ang = uni(0.0, 2.0 * 3.14159265358979323846);
            const Vec3 dir{std::cos(ang), 0.0, std::sin(ang)};
            offset = dir * (k == 0 ? -1.0 : 1.0) * uni(0.9, 1.3);
            vel = dir * (k == 0 ? 1.0 : -1.0) * cfg.initial_speed * uni(0.4, 1.0);
        } else {
            offset = spawn_offset(k);
            offset.y = cfg.spawn_height - slot.min_y;
        }
        for (int i = 0; i < slot.count; ++i) {
            st.particles[slot.first + i].position =
                slot.fragment.particles[i].position + offset;
            st.particles[slot.first + i].velocity = vel;
        }
    };

    for (int t = 0; t + 1 < cfg.n_frames; ++t) {
        std::vector<Vec3> force(n, Vec3{});
        if (t == next_force_frame && cfg.force_scale > 0.0) {
            make_impulse(t, force);
            next_force_frame = t + uni_int(cfg.force_interval_min, cfg.force_interval_max);
        }
        traj.frames[t].force = force;
        for (int s = 0; s < cfg.sim.substeps; ++s) st = step(st, dt_sub, force, cfg.sim, nullptr);

        bool reset = false;
        if (!tower && !cloth_hang) {
            for (int k = 0; k < n_objects; ++k) {
                if (out_of_bounds(k)) {
                    respawn(k);
                    reset = true;
                }
            }
        }
        Frame fr;
        fr.pos.resize(n);
        fr.vel.resize(n);
        fr.force.assign(n, Vec3{});
        for (int i = 0; i < n; ++i) {
            fr.pos[i] = st.particles[i].position;
            fr.vel[i] = reset ? st.particles[i].velocity * cfg.sim.dt
                              : st.particles[i].position - traj.frames[t].pos[i];
        }
        if (reset) traj.header.resets.push_back(t + 1);
        traj.frames.push_back(std::move(fr));
    }
    return traj;
}

}  // namespace hrn::sim
