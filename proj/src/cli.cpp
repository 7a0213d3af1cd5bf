#include "hrn/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hrn/checkpoint.hpp"
#include "hrn/config.hpp"
#include "hrn/json_util.hpp"
#include "hrn/parallel.hpp"
#include "hrn/train.hpp"
#include "hrn/trajectory_io.hpp"

namespace hrn::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::string> list_trajectory_files(const std::string& dir) {
    if (!fs::is_directory(dir))
        throw std::runtime_error("data directory does not exist: " + dir);
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".hrnt")
            files.push_back(entry.path().string());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::runtime_error("no .hrnt trajectories in " + dir);
    return files;
}

train::Dataset load_dataset(const std::string& dir) {
    train::Dataset data;
    for (const std::string& f : list_trajectory_files(dir))
        data.trajectories.push_back(io::read_trajectory(f));
    return data;
}

void echo_config(const io::RunConfig& cfg, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    out << cfg.to_json().dump(2) << "\n";
}

int cmd_gen(const io::RunConfig& cfg, const std::string& out_dir, int count) {
    fs::create_directories(out_dir);
    echo_config(cfg, (fs::path(out_dir) / "config.json").string());
    for (int i = 0; i < count; ++i) {
        const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(i);
        sim::ScenarioConfig sc = cfg.scenario;
        sc.hierarchy = cfg.hierarchy;
        sc.hierarchy.seed = seed;
        const sim::Trajectory traj = sim::gen_scenario(sc, seed);
        int n_objects = traj.header.scene.object_count();
        char name[128];
        std::snprintf(name, sizeof(name), "%s-%06llu.hrnt", traj.header.scenario.c_str(),
                      static_cast<unsigned long long>(seed));
        const std::string path = (fs::path(out_dir) / name).string();
        io::write_trajectory(path, traj);
        std::cout << path << ": frames=" << traj.frame_count()
                  << " particles=" << traj.particle_count() << " objects=" << n_objects
                  << " resets=" << traj.header.resets.size() << "\n";
    }
    return 0;
}

int cmd_train(const io::RunConfig& cfg, const std::string& data_dir, const std::string& out_path,
              const std::string& resume_path) {
    const train::Dataset data = load_dataset(data_dir);
    echo_config(cfg, out_path + ".config.json");

    std::unique_ptr<io::Checkpoint> resume;
    if (!resume_path.empty())
        resume = std::make_unique<io::Checkpoint>(io::load_checkpoint(resume_path));

    std::ofstream curve(out_path + ".curve.csv", std::ios::trunc);
    curve << "epoch,train_loss,val_loss,lr\n";
    auto cb = [&](const train::EpochStats& es, const model::HrnModel&) {
        curve << es.epoch << "," << es.train_loss << "," << es.val_loss << "," << es.lr << "\n";
        std::cout << "epoch " << es.epoch << ": train=" << es.train_loss
                  << " val=" << es.val_loss << " lr=" << es.lr << "\n";
        return true;
    };
    train::TrainResult res =
        train::train(data, cfg.model, cfg.loss, cfg.optim, cfg.seed, cb,
                     resume ? &resume->model : nullptr, resume ? &resume->adam : nullptr);

    io::Checkpoint ck;
    ck.model = std::move(res.model);
    ck.stats = std::move(res.stats);
    ck.loss = cfg.loss;
    ck.adam = std::move(res.adam);
    ck.seed = cfg.seed;
    io::save_checkpoint(out_path, ck);
    std::cout << "checkpoint written to " << out_path << " ("
              << ck.model.params().scalar_count() << " parameters)\n";
    return 0;
}

int cmd_rollout(const std::string& ckpt_path, const std::string& traj_path,
                const std::string& out_path, int steps, const std::string& csv_path) {
    const io::Checkpoint ck = io::load_checkpoint(ckpt_path);
    const sim::Trajectory source = io::read_trajectory(traj_path);
    const sim::Trajectory pred = train::rollout(ck.model, source, steps);
    io::write_trajectory(out_path, pred);

    const int T = ck.model.config().history;
    std::ofstream csv;
    if (!csv_path.empty()) {
        csv.open(csv_path, std::ios::trunc);
        csv << "frame,position_mse,delta_position_mse\n";
    }
    // cumulative position MSE against the source over the overlap
    double cum = 0.0;
    const int overlap = std::min(pred.frame_count(), source.frame_count());
    for (int t = T; t < overlap; ++t) {
        double pe = 0.0, de = 0.0;
        for (int i = 0; i < source.particle_count(); ++i) {
            pe += (pred.frames[t].pos[i] - source.frames[t].pos[i]).norm2();
            de += (pred.frames[t].vel[i] - source.frames[t].vel[i]).norm2();
        }
        pe /= source.particle_count();
        de /= source.particle_count();
        cum += pe;
        if (csv.is_open()) csv << t << "," << pe << "," << de << "\n";
        if (t - T < 9)
            std::cout << "t+" << (t - T + 1) << ": cumulative position MSE = " << cum << "\n";
    }
    std::cout << "rollout written to " << out_path << " (" << pred.frame_count() << " frames)\n";
    return 0;
}

int cmd_eval(const io::RunConfig& cfg, const std::vector<std::string>& checkpoints,
             const std::string& data_dir, const std::string& out_prefix) {
    const train::Dataset data = load_dataset(data_dir);
    std::vector<const sim::Trajectory*> test;
    for (const auto& tr : data.trajectories) test.push_back(&tr);

    std::ofstream csv(out_prefix + ".csv", std::ios::trunc);
    csv << "model,horizon,metric,value\n";
    json summary = json::object();
    bool any_nan = false;
    struct Row {
        std::string name;
        train::MetricReport rep;
        int history;
    };
    std::vector<Row> rows;
    for (const std::string& spec : checkpoints) {
        std::string name = spec, path = spec;
        const size_t eq = spec.find('=');
        if (eq != std::string::npos) {
            name = spec.substr(0, eq);
            path = spec.substr(eq + 1);
        } else {
            name = fs::path(spec).stem().string();
        }
        const io::Checkpoint ck = io::load_checkpoint(path);
        const train::MetricReport rep =
            train::evaluate(train::make_model_predictor(ck.model), test,
                            ck.model.config().history, cfg.eval);
        if (!rep.finite()) any_nan = true;
        rows.push_back({name, rep, ck.model.config().history});
    }
    for (const Row& r : rows) {
        json jm;
        for (int h = 0; h < cfg.eval.horizon; ++h) {
            csv << r.name << "," << (h + 1) << ",position," << r.rep.position[h] << "\n";
            csv << r.name << "," << (h + 1) << ",delta_position," << r.rep.delta_position[h]
                << "\n";
            csv << r.name << "," << (h + 1) << ",preserve_distance,"
                << r.rep.preserve_distance[h] << "\n";
        }
        jm["position"] = r.rep.position;
        jm["delta_position"] = r.rep.delta_position;
        jm["preserve_distance"] = r.rep.preserve_distance;
        jm["windows"] = r.rep.windows;
        summary[r.name] = std::move(jm);
    }
    {
        std::ofstream js(out_prefix + ".json", std::ios::trunc);
        js << summary.dump(2) << "\n";
    }
    const int last = cfg.eval.horizon - 1;
    std::cout << "cumulative MSE at t+" << cfg.eval.horizon
              << " (position / delta / preserve):\n";
    std::vector<const Row*> order;
    for (const Row& r : rows) order.push_back(&r);
    std::sort(order.begin(), order.end(),
              [&](const Row* a, const Row* b) { return a->rep.position[last] < b->rep.position[last]; });
    for (const Row* r : order)
        std::cout << "  " << r->name << ": " << r->rep.position[last] << " / "
                  << r->rep.delta_position[last] << " / " << r->rep.preserve_distance[last]
                  << "\n";
    if (any_nan) {
        std::cerr << "eval: non-finite metric encountered\n";
        return 2;
    }
    return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"hierarchical particle dynamics toolkit"};
    app.require_subcommand(0, 1);

    std::string config_path;
    std::uint64_t seed_override = 0;
    bool seed_given = false;
    bool deterministic = false;
    bool dump_config = false;
    int threads = 0;
    app.add_option("--config", config_path, "JSON run configuration");
    app.add_option("--seed", seed_override, "override config seed")->each([&](const std::string&) {
        seed_given = true;
    });
    app.add_flag("--deterministic", deterministic,
                 "single-threaded bit-reproducible mode");
    app.add_option("--threads", threads, "cap worker threads (0 = auto)");
    app.add_flag("--dump-config", dump_config, "print the full reference config and exit");

    auto* gen = app.add_subcommand("gen", "generate ground-truth trajectories");
    std::string gen_out = "data";
    int gen_count = -1;
    gen->add_option("--out", gen_out, "output directory");
    gen->add_option("--count", gen_count, "number of trajectories (overrides config)");

    auto* tr = app.add_subcommand("train", "train a model on generated trajectories");
    std::string train_data, train_out = "model.hrnc", train_resume;
    tr->add_option("--data", train_data, "directory of .hrnt files")->required();
    tr->add_option("--out", train_out, "checkpoint output path");
    tr->add_option("--resume", train_resume, "resume from an existing checkpoint");

    auto* ro = app.add_subcommand("rollout", "recursive prediction from a seed trajectory");
    std::string ro_ckpt, ro_traj, ro_out = "rollout.hrnt", ro_csv;
    int ro_steps = -1;
    ro->add_option("--checkpoint", ro_ckpt, "trained checkpoint")->required();
    ro->add_option("--traj", ro_traj, "seed trajectory file")->required();
    ro->add_option("--out", ro_out, "predicted trajectory output");
    ro->add_option("--steps", ro_steps, "prediction steps (default: config rollout_steps)");
    ro->add_option("--csv", ro_csv, "optional per-frame error CSV");

    auto* ev = app.add_subcommand("eval", "metric suite over a test set");
    std::vector<std::string> ev_ckpts;
    std::string ev_data, ev_out = "metrics";
    ev->add_option("--checkpoint", ev_ckpts, "checkpoints to compare (name=path)")->required();
    ev->add_option("--data", ev_data, "test trajectory directory")->required();
    ev->add_option("--out", ev_out, "output prefix for .csv/.json");

    try {
        app.parse(argc, const_cast<char**>(argv));
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (deterministic) par::set_deterministic(true);
        if (threads > 0) par::set_max_threads(threads);

        io::RunConfig cfg = io::RunConfig::load(config_path, /*apply_env=*/true);
        if (seed_given) cfg.seed = seed_override;
        cfg.hierarchy.seed = cfg.seed;
        cfg.scenario.hierarchy = cfg.hierarchy;

        if (dump_config) {
            std::cout << cfg.to_json().dump(2) << "\n";
            return 0;
        }
        if (gen->parsed())
            return cmd_gen(cfg, gen_out, gen_count >= 0 ? gen_count : cfg.n_trajectories);
        if (tr->parsed()) return cmd_train(cfg, train_data, train_out, train_resume);
        if (ro->parsed())
            return cmd_rollout(ro_ckpt, ro_traj, ro_out,
                               ro_steps >= 0 ? ro_steps : cfg.rollout_steps, ro_csv);
        if (ev->parsed()) return cmd_eval(cfg, ev_ckpts, ev_data, ev_out);
        std::cout << app.help();
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace hrn::cli
