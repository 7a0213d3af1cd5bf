#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "hrn/adam.hpp"
#include "hrn/loss.hpp"
#include "hrn/model.hpp"
#include "hrn/sim.hpp"

namespace hrn::train {

struct OptimConfig {
    int epochs = 50;
    int batch_size = 32;
    int steps_per_epoch = 0;  // 0 = one full pass over the training windows
    double learning_rate = 1e-3;
    std::vector<double> decay_fractions = {0.5, 0.75, 0.9};  // of total steps
    double val_fraction = 0.2;
    int val_window_cap = 512;

    void validate() const;
};

struct Dataset {
    std::vector<sim::Trajectory> trajectories;
};

// Transition sample: frames (t-T, t] predict frame t+1 of trajectory `traj`.
struct SampleRef {
    int traj = 0;
    int t = 0;
};

bool window_valid(const sim::Trajectory& tr, int t, int history, int horizon);
model::StepInput make_step_input(const sim::Trajectory& tr, int t, int history);

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double lr = 0.0;
    std::int64_t steps = 0;
};

struct TrainResult {
    model::HrnModel model;
    NormStats stats;
    std::vector<EpochStats> curve;
    AdamState adam;
    std::vector<int> train_trajs, val_trajs;
};

// Returns false to stop early.
using EpochCallback = std::function<bool(const EpochStats&, const model::HrnModel&)>;

// Minibatch one-step supervised training with Adam and the stepwise schedule.
// Splits train/val by whole trajectory; normalization statistics come from
// the training split only. Auto-resolves collision radius (1.5 * lattice
// spacing) and material/particle dims from the data. Throws on divergence.
TrainResult train(const Dataset& data, model::ModelConfig mcfg, LossConfig lcfg, OptimConfig ocfg,
                  std::uint64_t seed, const EpochCallback& callback = {},
                  const model::HrnModel* resume_from = nullptr,
                  const AdamState* resume_adam = nullptr);

// Autoregressive prediction seeded with the first `history` frames of
// `source`; scripted forces are taken from the source (zeros past its end).
// Throws std::runtime_error naming the step if a prediction goes non-finite.
sim::Trajectory rollout(const model::HrnModel& m, const sim::Trajectory& source, int n_steps);

using StepFn = std::function<model::StepOutput(const model::StepInput&)>;

StepFn make_model_predictor(const model::HrnModel& m);
StepFn make_identity_predictor();

struct MetricReport {
    // cumulative MSE per horizon step 1..H
    std::vector<double> position;
    std::vector<double> delta_position;
    std::vector<double> preserve_distance;
    int windows = 0;

    bool finite() const;
};

struct EvalOptions {
    int horizon = 9;
    int window_stride = 5;
    int max_windows_per_traj = 0;  // 0 = unlimited
};

// Cumulative position / delta-position / preserve-distance MSE over
// recursive rollout windows, averaged over windows of the test split.
MetricReport evaluate(const StepFn& predict, const std::vector<const sim::Trajectory*>& test,
                      int history, const EvalOptions& opt = {});

// One-step leaf position MSE over every valid window (no rollout); the
// quantity the learning smoke test tracks.
double one_step_position_mse(const model::HrnModel& m, const std::vector<const sim::Trajectory*>& test);

}  // namespace hrn::train
