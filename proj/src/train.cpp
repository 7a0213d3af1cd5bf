#include "hrn/train.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <stdexcept>

#include "hrn/parallel.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace hrn::train {

void OptimConfig::validate() const {
    if (epochs < 0) throw std::invalid_argument("OptimConfig: epochs >= 0");
    if (batch_size < 1) throw std::invalid_argument("OptimConfig: batch_size >= 1");
    if (!(learning_rate >= 0.0)) throw std::invalid_argument("OptimConfig: learning_rate >= 0");
    if (!(val_fraction >= 0.0 && val_fraction < 1.0))
        throw std::invalid_argument("OptimConfig: val_fraction in [0,1)");
}

bool window_valid(const sim::Trajectory& tr, int t, int history, int horizon) {
    if (t - history + 1 < 0 || t + horizon >= tr.frame_count()) return false;
    for (int r : tr.header.resets)
        if (r >= t - history + 2 && r <= t + horizon) return false;
    return true;
}

model::StepInput make_step_input(const sim::Trajectory& tr, int t, int history) {
    model::StepInput in;
    in.hierarchy = &tr.header.hierarchy;
    in.gravity = tr.header.gravity;
    in.material_relations = &tr.header.scene.relations;
    for (int f = t - history + 1; f <= t; ++f) {
        in.pos.push_back(tr.frames[f].pos);
        in.vel.push_back(tr.frames[f].vel);
        in.force.push_back(tr.frames[f].force);
    }
    return in;
}

namespace {

void resolve_model_config(model::ModelConfig& mcfg, const Dataset& data) {
    if (data.trajectories.empty()) throw std::invalid_argument("train: empty dataset");
    double min_spacing = data.trajectories[0].header.spacing;
    for (const auto& tr : data.trajectories)
        min_spacing = std::min(min_spacing, tr.header.spacing);
    if (mcfg.collision_radius <= 0.0) mcfg.collision_radius = 1.5 * min_spacing;
    mcfg.dt = data.trajectories[0].header.dt;
    mcfg.material_dim = data.trajectories[0].header.hierarchy.material_dim;
    if (mcfg.variant == model::Variant::MlpBaseline) {
        const int n = data.trajectories[0].particle_count();
        for (const auto& tr : data.trajectories)
            if (tr.particle_count() != n)
                throw std::invalid_argument("baseline: trajectories have unequal particle counts");
        mcfg.baseline_particles = n;
    }
}

double batch_forward_backward(const model::HrnModel& m, const Dataset& data,
                              const std::vector<model::HierPlans>& plans,
                              const std::vector<std::vector<LossTargets>>& targets_cache,
                              std::span<const SampleRef> batch, const LossConfig& lcfg,
                              ParamStore& grad_out, bool backward) {
    const int B = static_cast<int>(batch.size());
    const int nt = par::thread_count_for(B);
    std::vector<double> losses(B, 0.0);
    std::vector<std::unique_ptr<ParamStore>> tl(nt);
    std::string error;

    auto run_range = [&](int tid) {
        ParamStore* acc = nullptr;
        if (backward) {
            tl[tid] = std::make_unique<ParamStore>(m.params());
            tl[tid]->zero_grads();
            acc = tl[tid].get();
        }
        for (int b = tid; b < B; b += nt) {
            const SampleRef& s = batch[b];
            const sim::Trajectory& tr = data.trajectories[s.traj];
            const model::StepInput in = make_step_input(tr, s.t, m.config().history);
            auto ts = m.build_step(in, &plans[s.traj]);
            const LossTargets& targets = targets_cache[s.traj][s.t];
            const int loss = build_loss_node(ts->tape, ts->local_delta, ts->world_delta, targets,
                                             lcfg);
            losses[b] = ts->tape.value(loss).d[0];
            if (backward) {
                ts->tape.backward(loss);
                ts->binder.accumulate_grads(ts->tape, *acc);
            }
        }
    };

    if (nt <= 1) {
        run_range(0);
    } else {
#ifdef _OPENMP
#pragma omp parallel num_threads(nt)
        {
            const int tid = omp_get_thread_num();
            try {
                run_range(tid);
            } catch (const std::exception& e) {
#pragma omp critical
                error = e.what();
            }
        }
#else
        run_range(0);
#endif
    }
    if (!error.empty()) throw std::runtime_error(error);

    if (backward) {
        const double scale = 1.0 / B;
        for (const std::string& name : grad_out.names()) {
            Tensor2& dst = grad_out.grad(name);
            for (int tid = 0; tid < nt; ++tid) {
                if (!tl[tid]) continue;
                const Tensor2& src = tl[tid]->grad(name);
                for (size_t i = 0; i < dst.size(); ++i) dst.d[i] += src.d[i] * scale;
            }
        }
    }
    double total = 0.0;
    for (double l : losses) total += l;
    return total / B;
}

}  // namespace

TrainResult train(const Dataset& data, model::ModelConfig mcfg, LossConfig lcfg, OptimConfig ocfg,
                  std::uint64_t seed, const EpochCallback& callback,
                  const model::HrnModel* resume_from, const AdamState* resume_adam) {
    ocfg.validate();
    lcfg.validate();
    resolve_model_config(mcfg, data);
    const int n_traj = static_cast<int>(data.trajectories.size());

    TrainResult res;
    int n_val = n_traj > 1 ? std::max(ocfg.val_fraction > 0.0 ? 1 : 0,
                                      static_cast<int>(std::floor(ocfg.val_fraction * n_traj)))
                           : 0;
    for (int i = 0; i < n_traj - n_val; ++i) res.train_trajs.push_back(i);
    for (int i = n_traj - n_val; i < n_traj; ++i) res.val_trajs.push_back(i);

    std::vector<const sim::Trajectory*> train_ptrs;
    for (int i : res.train_trajs) train_ptrs.push_back(&data.trajectories[i]);
    res.stats = fit_norm_stats(train_ptrs);

    res.model = resume_from ? *resume_from : model::HrnModel::init(mcfg, seed);
    if (resume_from) res.model.config() = mcfg;

    const int T = mcfg.history;
    std::vector<SampleRef> windows;
    for (int i : res.train_trajs) {
        const sim::Trajectory& tr = data.trajectories[i];
        for (int t = T - 1; t + 1 < tr.frame_count(); ++t)
            if (window_valid(tr, t, T, 1)) windows.push_back({i, t});
    }
    std::vector<SampleRef> val_windows;
    for (int i : res.val_trajs) {
        const sim::Trajectory& tr = data.trajectories[i];
        for (int t = T - 1; t + 1 < tr.frame_count(); ++t)
            if (window_valid(tr, t, T, 1)) val_windows.push_back({i, t});
    }
    if (ocfg.val_window_cap > 0 && static_cast<int>(val_windows.size()) > ocfg.val_window_cap) {
        std::vector<SampleRef> trimmed;
        const double stride = static_cast<double>(val_windows.size()) / ocfg.val_window_cap;
        for (int k = 0; k < ocfg.val_window_cap; ++k)
            trimmed.push_back(val_windows[static_cast<size_t>(k * stride)]);
        val_windows = std::move(trimmed);
    }
    if (windows.empty()) throw std::invalid_argument("train: no usable training windows");

    // Per-trajectory plans and loss targets, shared across epochs.
    std::vector<model::HierPlans> plans(n_traj);
    std::vector<std::vector<LossTargets>> targets(n_traj);
    for (int i = 0; i < n_traj; ++i) {
        const sim::Trajectory& tr = data.trajectories[i];
        plans[i] = model::HierPlans::build(tr.header.hierarchy);
        targets[i].resize(std::max(0, tr.frame_count() - 1));
    }
    auto ensure_targets = [&](const std::vector<SampleRef>& refs) {
        for (const SampleRef& s : refs) {
            if (targets[s.traj][s.t].node_count == 0) {
                const sim::Trajectory& tr = data.trajectories[s.traj];
                targets[s.traj][s.t] = make_loss_targets(tr.header.hierarchy, tr.frames[s.t].pos,
                                                         tr.frames[s.t + 1].pos, res.stats);
            }
        }
    };
    ensure_targets(windows);
    ensure_targets(val_windows);

    const int steps_per_epoch =
        ocfg.steps_per_epoch > 0
            ? ocfg.steps_per_epoch
            : static_cast<int>((windows.size() + ocfg.batch_size - 1) / ocfg.batch_size);
    const std::int64_t total_steps = static_cast<std::int64_t>(steps_per_epoch) * ocfg.epochs;

    AdamState adam;
    if (resume_adam) adam = *resume_adam;
    adam.schedule.initial = ocfg.learning_rate;
    adam.schedule.decay_steps.clear();
    for (double f : ocfg.decay_fractions)
        adam.schedule.decay_steps.push_back(
            std::max<std::int64_t>(1, static_cast<std::int64_t>(f * total_steps)));

    std::mt19937_64 shuffle_rng(seed ^ 0x9e3779b97f4a7c15ull);
    size_t cursor = windows.size();  // force shuffle on first use

    for (int epoch = 0; epoch < ocfg.epochs; ++epoch) {
        double epoch_loss = 0.0;
        int epoch_batches = 0;
        for (int step = 0; step < steps_per_epoch; ++step) {
            std::vector<SampleRef> batch;
            batch.reserve(ocfg.batch_size);
            for (int b = 0; b < ocfg.batch_size; ++b) {
                if (cursor >= windows.size()) {
                    std::shuffle(windows.begin(), windows.end(), shuffle_rng);
                    cursor = 0;
                }
                batch.push_back(windows[cursor++]);
            }
            res.model.params().zero_grads();
            const double loss = batch_forward_backward(res.model, data, plans, targets, batch,
                                                       lcfg, res.model.params(), true);
            if (!std::isfinite(loss))
                throw std::runtime_error("train: loss diverged (non-finite) at epoch " +
                                         std::to_string(epoch) + " step " + std::to_string(step));
            adam_step(res.model.params(), adam);
            epoch_loss += loss;
            epoch_batches++;
        }

        EpochStats es;
        es.epoch = epoch;
        es.steps = adam.step;
        es.train_loss = epoch_batches > 0 ? epoch_loss / epoch_batches : 0.0;
        es.lr = adam.schedule.at(adam.step);
        if (!val_windows.empty()) {
            ParamStore dummy;
            es.val_loss = batch_forward_backward(res.model, data, plans, targets, val_windows,
                                                 lcfg, dummy, false);
        }
        res.curve.push_back(es);
        if (callback && !callback(es, res.model)) break;
    }
    res.adam = std::move(adam);
    return res;
}

sim::Trajectory rollout(const model::HrnModel& m, const sim::Trajectory& source, int n_steps) {
    const int T = m.config().history;
    if (source.frame_count() < T)
        throw std::invalid_argument("rollout: source shorter than the history window");
    if (n_steps < 0) throw std::invalid_argument("rollout: n_steps >= 0");
    const model::HierPlans plans = model::HierPlans::build(source.header.hierarchy);

    sim::Trajectory out;
    out.header = source.header;
    out.header.resets.clear();
    for (int f = 0; f < T; ++f) out.frames.push_back(source.frames[f]);

    for (int k = 0; k < n_steps; ++k) {
        const int t = T - 1 + k;  // predicting frame t+1
        model::StepInput in;
        in.hierarchy = &out.header.hierarchy;
        in.gravity = out.header.gravity;
        in.material_relations = &out.header.scene.relations;
        for (int f = t - T + 1; f <= t; ++f) {
            in.pos.push_back(out.frames[f].pos);
            in.vel.push_back(out.frames[f].vel);
            in.force.push_back(f < source.frame_count()
                                   ? source.frames[f].force
                                   : std::vector<Vec3>(source.particle_count(), Vec3{}));
        }
        auto ts = m.build_step(in, &plans);
        const Tensor2& world = ts->tape.value(ts->world_delta);
        sim::Frame fr;
        const int L = source.particle_count();
        fr.pos.resize(L);
        fr.vel.resize(L);
        fr.force.assign(L, Vec3{});
        if (t + 1 < source.frame_count()) fr.force = source.frames[t + 1].force;
        for (int i = 0; i < L; ++i) {
            const Vec3 d{world.at(i, 0), world.at(i, 1), world.at(i, 2)};
            if (!d.finite())
                throw std::runtime_error("rollout: non-finite prediction at step " +
                                         std::to_string(k) + " (frame " + std::to_string(t + 1) +
                                         ")");
            fr.vel[i] = d;
            fr.pos[i] = out.frames[t].pos[i] + d;
        }
        out.frames.push_back(std::move(fr));
    }
    return out;
}

StepFn make_model_predictor(const model::HrnModel& m) {
    auto plan_cache = std::make_shared<std::map<const HierarchyGraph*, model::HierPlans>>();
    const model::HrnModel* mp = &m;
    return [mp, plan_cache](const model::StepInput& in) {
        auto it = plan_cache->find(in.hierarchy);
        if (it == plan_cache->end())
            it = plan_cache->emplace(in.hierarchy, model::HierPlans::build(*in.hierarchy)).first;
        auto ts = mp->build_step(in, &it->second);
        const Tensor2& local = ts->tape.value(ts->local_delta);
        const Tensor2& world = ts->tape.value(ts->world_delta);
        model::StepOutput out;
        const int M = in.hierarchy->node_count();
        const int L = in.hierarchy->leaf_count;
        out.local_delta.resize(M);
        out.world_delta.resize(M);
        for (int i = 0; i < M; ++i) {
            out.local_delta[i] = {local.at(i, 0), local.at(i, 1), local.at(i, 2)};
            out.world_delta[i] = {world.at(i, 0), world.at(i, 1), world.at(i, 2)};
        }
        out.next_pos.resize(L);
        out.next_vel.resize(L);
        for (int i = 0; i < L; ++i) {
            out.next_vel[i] = out.world_delta[i];
            out.next_pos[i] = in.pos.back()[i] + out.world_delta[i];
        }
        return out;
    };
}

StepFn make_identity_predictor() {
    return [](const model::StepInput& in) {
        model::StepOutput out;
        const int M = in.hierarchy->node_count();
        const int L = in.hierarchy->leaf_count;
        out.local_delta.assign(M, Vec3{});
        out.world_delta.assign(M, Vec3{});
        out.next_pos = in.pos.back();
        out.next_vel.assign(L, Vec3{});
        return out;
    };
}

bool MetricReport::finite() const {
    auto ok = [](const std::vector<double>& v) {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    };
    return ok(position) && ok(delta_position) && ok(preserve_distance);
}

MetricReport evaluate(const StepFn& predict, const std::vector<const sim::Trajectory*>& test,
                      int history, const EvalOptions& opt) {
    if (test.empty()) throw std::invalid_argument("evaluate: empty test set");
    const int H = opt.horizon;
    for (const sim::Trajectory* tr : test)
        if (tr->frame_count() < history + H)
            throw std::invalid_argument("evaluate: horizon exceeds trajectory length");

    MetricReport rep;
    std::vector<double> pos_acc(H, 0.0), delta_acc(H, 0.0), dist_acc(H, 0.0);

    for (const sim::Trajectory* trp : test) {
        const sim::Trajectory& tr = *trp;
        const int L = tr.particle_count();
        // unique bonded leaf pairs for the preserve-distance metric
        std::vector<std::pair<int, int>> pairs;
        for (const Relation& r : tr.header.scene.relations)
            if (r.sender < r.receiver) pairs.emplace_back(r.sender, r.receiver);
        int taken = 0;
        for (int t = history - 1; t + H < tr.frame_count();
             t += std::max(1, opt.window_stride)) {
            if (!window_valid(tr, t, history, H)) continue;
            if (opt.max_windows_per_traj > 0 && taken >= opt.max_windows_per_traj) break;
            taken++;
            rep.windows++;
            // autoregressive window rollout
            std::vector<std::vector<Vec3>> pos, vel, frc;
            for (int f = t - history + 1; f <= t; ++f) {
                pos.push_back(tr.frames[f].pos);
                vel.push_back(tr.frames[f].vel);
                frc.push_back(tr.frames[f].force);
            }
            for (int h = 1; h <= H; ++h) {
                model::StepInput in;
                in.hierarchy = &tr.header.hierarchy;
                in.gravity = tr.header.gravity;
                in.material_relations = &tr.header.scene.relations;
                in.pos = pos;
                in.vel = vel;
                in.force = frc;
                const model::StepOutput out = predict(in);
                const sim::Frame& truth = tr.frames[t + h];
                double pe = 0.0, de = 0.0;
                for (int i = 0; i < L; ++i) {
                    pe += (out.next_pos[i] - truth.pos[i]).norm2();
                    de += (out.next_vel[i] - truth.vel[i]).norm2();
                }
                pos_acc[h - 1] += pe / L;
                delta_acc[h - 1] += de / L;
                if (!pairs.empty()) {
                    double se = 0.0;
                    for (const auto& [a, b] : pairs) {
                        const double dp = (out.next_pos[a] - out.next_pos[b]).norm();
                        const double dt = (truth.pos[a] - truth.pos[b]).norm();
                        se += (dp - dt) * (dp - dt);
                    }
                    dist_acc[h - 1] += se / pairs.size();
                }
                // slide the window with the prediction
                pos.erase(pos.begin());
                vel.erase(vel.begin());
                frc.erase(frc.begin());
                pos.push_back(out.next_pos);
                vel.push_back(out.next_vel);
                frc.push_back(t + h < tr.frame_count() ? tr.frames[t + h].force
                                                       : std::vector<Vec3>(L, Vec3{}));
            }
        }
    }
    if (rep.windows == 0) throw std::invalid_argument("evaluate: no valid windows");
    rep.position.resize(H);
    rep.delta_position.resize(H);
    rep.preserve_distance.resize(H);
    double cp = 0.0, cd = 0.0, cs = 0.0;
    for (int h = 0; h < H; ++h) {
        cp += pos_acc[h] / rep.windows;
        cd += delta_acc[h] / rep.windows;
        cs += dist_acc[h] / rep.windows;
        rep.position[h] = cp;
        rep.delta_position[h] = cd;
        rep.preserve_distance[h] = cs;
    }
    return rep;
}

double one_step_position_mse(const model::HrnModel& m,
                             const std::vector<const sim::Trajectory*>& test) {
    const int T = m.config().history;
    double acc = 0.0;
    std::int64_t count = 0;
    std::map<const HierarchyGraph*, model::HierPlans> plans;
    for (const sim::Trajectory* trp : test) {
        const sim::Trajectory& tr = *trp;
        auto it = plans.find(&tr.header.hierarchy);
        if (it == plans.end())
            it = plans.emplace(&tr.header.hierarchy, model::HierPlans::build(tr.header.hierarchy))
                     .first;
        for (int t = T - 1; t + 1 < tr.frame_count(); ++t) {
            if (!window_valid(tr, t, T, 1)) continue;
            const model::StepInput in = make_step_input(tr, t, T);
            auto ts = m.build_step(in, &it->second);
            const Tensor2& world = ts->tape.value(ts->world_delta);
            const sim::Frame& truth = tr.frames[t + 1];
            double pe = 0.0;
            for (int i = 0; i < tr.particle_count(); ++i) {
                const Vec3 next = in.pos.back()[i] + Vec3{world.at(i, 0), world.at(i, 1),
                                                          world.at(i, 2)};
                pe += (next - truth.pos[i]).norm2();
            }
            acc += pe / tr.particle_count();
            count++;
        }
    }
    if (count == 0) throw std::invalid_argument("one_step_position_mse: no valid windows");
    return acc / count;
}

}  // namespace hrn::train
