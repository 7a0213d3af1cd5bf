#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "hrn/graph.hpp"
#include "hrn/model.hpp"
#include "hrn/sim.hpp"
#include "hrn/train.hpp"

namespace hrn::io {

// Whole-run configuration document. Parsing is strict: unknown keys are
// rejected with their full path. Environment variables prefixed HRN_ override
// keys (HRN_OPTIMIZER__EPOCHS=3 sets optimizer.epochs; double underscore
// separates path segments).
struct RunConfig {
    HierarchyConfig hierarchy;
    sim::ScenarioConfig scenario;  // carries SimParams and frame count
    int n_trajectories = 8;
    model::ModelConfig model;
    train::LossConfig loss;
    train::OptimConfig optim;
    train::EvalOptions eval;
    std::uint64_t seed = 0;
    int rollout_steps = 50;

    static RunConfig defaults();
    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const std::string& path, bool apply_env = true);

    // Applies HRN_* environment overrides onto a JSON document.
    static void apply_env_overrides(nlohmann::json& j);
};

}  // namespace hrn::io
