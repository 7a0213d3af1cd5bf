#include "hrn/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <stdexcept>

#include "hrn/json_util.hpp"

extern char** environ;

namespace hrn::io {

using nlohmann::json;

namespace {

void expect_keys(const json& j, const std::set<std::string>& allowed, const std::string& path) {
    if (!j.is_object()) throw std::invalid_argument("config: expected object at " + path);
    for (const auto& [key, value] : j.items()) {
        if (!allowed.count(key))
            throw std::invalid_argument("config: unknown key '" +
                                        (path.empty() ? key : path + "." + key) + "'");
    }
}

json vec3_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

Vec3 vec3_parse(const json& j, const std::string& path) {
    if (!j.is_array() || j.size() != 3)
        throw std::invalid_argument("config: " + path + " must be a 3-array");
    return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

json shape_json(const sim::ShapeSpec& s) {
    return json{{"kind", sim::to_string(s.kind)},
                {"extent", vec3_json(s.extent)},
                {"spacing", s.spacing},
                {"stiffness", s.stiffness},
                {"mass", s.mass_total}};
}

sim::ShapeSpec shape_parse(const json& j, const std::string& path) {
    expect_keys(j, {"kind", "extent", "spacing", "stiffness", "mass"}, path);
    sim::ShapeSpec s;
    if (j.contains("kind")) s.kind = sim::shape_kind_from_string(j.at("kind").get<std::string>());
    if (j.contains("extent")) s.extent = vec3_parse(j.at("extent"), path + ".extent");
    if (j.contains("spacing")) s.spacing = j.at("spacing").get<double>();
    if (j.contains("stiffness")) s.stiffness = j.at("stiffness").get<double>();
    if (j.contains("mass")) s.mass_total = j.at("mass").get<double>();
    return s;
}

template <typename T>
void opt(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

RunConfig RunConfig::defaults() {
    RunConfig c;
    c.scenario.name = "multi-on-plane";
    c.scenario.n_frames = 120;
    c.scenario.surface = sim::ShapeSpec{sim::ShapeKind::Plane, {6, 0, 6}, 1.0, 1.0, 1.0};
    return c;
}

json RunConfig::to_json() const {
    json j;
    j["seed"] = seed;
    j["n_trajectories"] = n_trajectories;
    j["rollout_steps"] = rollout_steps;
    j["hierarchy"] = json{{"cluster_size", hierarchy.cluster_size},
                          {"kmeans_iters", hierarchy.kmeans_iters}};
    json sc;
    sc["name"] = scenario.name;
    sc["frames"] = scenario.n_frames;
    json objs = json::array();
    for (const sim::ShapeSpec& s : scenario.objects) objs.push_back(shape_json(s));
    sc["objects"] = objs;
    sc["surface"] = shape_json(scenario.surface);
    sc["with_surface"] = scenario.with_surface;
    sc["gravity"] = vec3_json(scenario.gravity);
    sc["force_scale"] = scenario.force_scale;
    sc["initial_speed"] = scenario.initial_speed;
    sc["force_interval"] = json::array({scenario.force_interval_min, scenario.force_interval_max});
    sc["soft"] = scenario.soft;
    sc["bounds"] = scenario.bounds;
    sc["spawn_height"] = scenario.spawn_height;
    sc["tower_cubes"] = scenario.tower_cubes;
    j["scenario"] = std::move(sc);
    j["sim"] = json{{"dt", scenario.sim.dt},
                    {"substeps", scenario.sim.substeps},
                    {"spring_unit_k", scenario.sim.spring_unit_k},
                    {"spring_damping", scenario.sim.spring_damping},
                    {"restitution", scenario.sim.restitution},
                    {"surface_friction", scenario.sim.surface_friction},
                    {"contact_k", scenario.sim.contact_k},
                    {"contact_damping", scenario.sim.contact_damping},
                    {"contact_tangent_damping", scenario.sim.contact_tangent_damping}};
    j["model"] = model_config_to_json(model);
    j["loss"] = loss_config_to_json(loss);
    j["optimizer"] = json{{"epochs", optim.epochs},
                          {"batch_size", optim.batch_size},
                          {"steps_per_epoch", optim.steps_per_epoch},
                          {"learning_rate", optim.learning_rate},
                          {"decay_fractions", optim.decay_fractions},
                          {"val_fraction", optim.val_fraction},
                          {"val_window_cap", optim.val_window_cap}};
    j["eval"] = json{{"horizon", eval.horizon},
                     {"window_stride", eval.window_stride},
                     {"max_windows_per_traj", eval.max_windows_per_traj}};
    return j;
}

RunConfig RunConfig::from_json(const json& j) {
    expect_keys(j,
                {"seed", "n_trajectories", "rollout_steps", "hierarchy", "scenario", "sim",
                 "model", "loss", "optimizer", "eval"},
                "");
    RunConfig c = defaults();
    opt(j, "seed", c.seed);
    opt(j, "n_trajectories", c.n_trajectories);
    opt(j, "rollout_steps", c.rollout_steps);
    if (j.contains("hierarchy")) {
        const json& h = j.at("hierarchy");
        expect_keys(h, {"cluster_size", "kmeans_iters"}, "hierarchy");
        opt(h, "cluster_size", c.hierarchy.cluster_size);
        opt(h, "kmeans_iters", c.hierarchy.kmeans_iters);
    }
    if (j.contains("scenario")) {
        const json& s = j.at("scenario");
        expect_keys(s,
                    {"name", "frames", "objects", "surface", "with_surface", "gravity",
                     "force_scale", "initial_speed", "force_interval", "soft", "bounds",
                     "spawn_height", "tower_cubes"},
                    "scenario");
        opt(s, "name", c.scenario.name);
        if (s.contains("frames")) c.scenario.n_frames = s.at("frames").get<int>();
        if (s.contains("objects")) {
            c.scenario.objects.clear();
            int k = 0;
            for (const json& o : s.at("objects"))
                c.scenario.objects.push_back(
                    shape_parse(o, "scenario.objects[" + std::to_string(k++) + "]"));
        }
        if (s.contains("surface")) c.scenario.surface = shape_parse(s.at("surface"), "scenario.surface");
        opt(s, "with_surface", c.scenario.with_surface);
        if (s.contains("gravity")) c.scenario.gravity = vec3_parse(s.at("gravity"), "scenario.gravity");
        opt(s, "force_scale", c.scenario.force_scale);
        opt(s, "initial_speed", c.scenario.initial_speed);
        if (s.contains("force_interval")) {
            const json& fi = s.at("force_interval");
            if (!fi.is_array() || fi.size() != 2)
                throw std::invalid_argument("config: scenario.force_interval must be [min, max]");
            c.scenario.force_interval_min = fi.at(0).get<int>();
            c.scenario.force_interval_max = fi.at(1).get<int>();
        }
        opt(s, "soft", c.scenario.soft);
        opt(s, "bounds", c.scenario.bounds);
        opt(s, "spawn_height", c.scenario.spawn_height);
        opt(s, "tower_cubes", c.scenario.tower_cubes);
    }
    if (j.contains("sim")) {
        const json& s = j.at("sim");
        expect_keys(s,
                    {"dt", "substeps", "spring_unit_k", "spring_damping", "restitution",
                     "surface_friction", "contact_k", "contact_damping",
                     "contact_tangent_damping"},
                    "sim");
        opt(s, "dt", c.scenario.sim.dt);
        opt(s, "substeps", c.scenario.sim.substeps);
        opt(s, "spring_unit_k", c.scenario.sim.spring_unit_k);
        opt(s, "spring_damping", c.scenario.sim.spring_damping);
        opt(s, "restitution", c.scenario.sim.restitution);
        opt(s, "surface_friction", c.scenario.sim.surface_friction);
        opt(s, "contact_k", c.scenario.sim.contact_k);
        opt(s, "contact_damping", c.scenario.sim.contact_damping);
        opt(s, "contact_tangent_damping", c.scenario.sim.contact_tangent_damping);
    }
    if (j.contains("model")) {
        const json& m = j.at("model");
        expect_keys(m,
                    {"variant", "history", "collision_radius", "effect_dim", "self_collisions",
                     "no_force_encoder", "no_collision_encoder", "no_history_encoder", "hidden",
                     "decoder_hidden", "baseline_hidden", "material_dim", "baseline_particles",
                     "dt"},
                    "model");
        json full = model_config_to_json(c.model);
        for (const auto& [k, v] : m.items()) full[k] = v;
        c.model = model_config_from_json(full);
    }
    if (j.contains("loss")) {
        const json& l = j.at("loss");
        expect_keys(l, {"alpha", "beta"}, "loss");
        opt(l, "alpha", c.loss.alpha);
        opt(l, "beta", c.loss.beta);
    }
    if (j.contains("optimizer")) {
        const json& o = j.at("optimizer");
        expect_keys(o,
                    {"epochs", "batch_size", "steps_per_epoch", "learning_rate",
                     "decay_fractions", "val_fraction", "val_window_cap"},
                    "optimizer");
        opt(o, "epochs", c.optim.epochs);
        opt(o, "batch_size", c.optim.batch_size);
        opt(o, "steps_per_epoch", c.optim.steps_per_epoch);
        opt(o, "learning_rate", c.optim.learning_rate);
        opt(o, "decay_fractions", c.optim.decay_fractions);
        opt(o, "val_fraction", c.optim.val_fraction);
        opt(o, "val_window_cap", c.optim.val_window_cap);
    }
    if (j.contains("eval")) {
        const json& e = j.at("eval");
        expect_keys(e, {"horizon", "window_stride", "max_windows_per_traj"}, "eval");
        opt(e, "horizon", c.eval.horizon);
        opt(e, "window_stride", c.eval.window_stride);
        opt(e, "max_windows_per_traj", c.eval.max_windows_per_traj);
    }
    c.hierarchy.seed = c.seed;
    c.scenario.hierarchy = c.hierarchy;
    return c;
}

void RunConfig::apply_env_overrides(json& j) {
    for (char** env = environ; *env; ++env) {
        const std::string entry(*env);
        if (entry.rfind("HRN_", 0) != 0) continue;
        const size_t eq = entry.find('=');
        if (eq == std::string::npos) continue;
        std::string keypath = entry.substr(4, eq - 4);
        const std::string value = entry.substr(eq + 1);
        std::transform(keypath.begin(), keypath.end(), keypath.begin(),
                       [](unsigned char c) { return std::tolower(c); });
        std::vector<std::string> parts;
        size_t start = 0;
        while (true) {
            const size_t sep = keypath.find("__", start);
            if (sep == std::string::npos) {
                parts.push_back(keypath.substr(start));
                break;
            }
            parts.push_back(keypath.substr(start, sep - start));
            start = sep + 2;
        }
        json* node = &j;
        for (size_t i = 0; i + 1 < parts.size(); ++i) node = &((*node)[parts[i]]);
        json parsed;
        try {
            parsed = json::parse(value);
        } catch (...) {
            parsed = value;
        }
        (*node)[parts.back()] = parsed;
    }
}

RunConfig RunConfig::load(const std::string& path, bool apply_env) {
    json j;
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("config: cannot open " + path);
        try {
            j = json::parse(in);
        } catch (const std::exception& e) {
            throw std::runtime_error("config: parse error in " + path + ": " + e.what());
        }
    } else {
        j = json::object();
    }
    if (apply_env) apply_env_overrides(j);
    return from_json(j);
}

}  // namespace hrn::io
