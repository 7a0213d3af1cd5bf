#include "hrn/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include "hrn/json_util.hpp"

namespace hrn::io {

using nlohmann::json;

json model_config_to_json(const model::ModelConfig& c) {
    json j;
    j["variant"] = model::to_string(c.variant);
    j["history"] = c.history;
    j["collision_radius"] = c.collision_radius;
    j["effect_dim"] = c.effect_dim;
    j["self_collisions"] = c.self_collisions;
    j["no_force_encoder"] = c.no_force_encoder;
    j["no_collision_encoder"] = c.no_collision_encoder;
    j["no_history_encoder"] = c.no_history_encoder;
    j["hidden"] = c.hidden;
    j["decoder_hidden"] = c.decoder_hidden;
    j["baseline_hidden"] = c.baseline_hidden;
    j["material_dim"] = c.material_dim;
    j["baseline_particles"] = c.baseline_particles;
    j["dt"] = c.dt;
    return j;
}

model::ModelConfig model_config_from_json(const json& j) {
    model::ModelConfig c;
    c.variant = model::variant_from_string(j.at("variant").get<std::string>());
    c.history = j.at("history").get<int>();
    c.collision_radius = j.at("collision_radius").get<double>();
    c.effect_dim = j.at("effect_dim").get<int>();
    c.self_collisions = j.at("self_collisions").get<bool>();
    c.no_force_encoder = j.at("no_force_encoder").get<bool>();
    c.no_collision_encoder = j.at("no_collision_encoder").get<bool>();
    c.no_history_encoder = j.at("no_history_encoder").get<bool>();
    c.hidden = j.at("hidden").get<std::vector<int>>();
    c.decoder_hidden = j.at("decoder_hidden").get<std::vector<int>>();
    c.baseline_hidden = j.at("baseline_hidden").get<std::vector<int>>();
    c.material_dim = j.at("material_dim").get<int>();
    c.baseline_particles = j.at("baseline_particles").get<int>();
    c.dt = j.at("dt").get<double>();
    return c;
}

json loss_config_to_json(const train::LossConfig& c) {
    return json{{"alpha", c.alpha}, {"beta", c.beta}};
}

train::LossConfig loss_config_from_json(const json& j) {
    train::LossConfig c;
    c.alpha = j.at("alpha").get<double>();
    c.beta = j.at("beta").get<double>();
    return c;
}

json norm_stats_to_json(const train::NormStats& s) {
    json out = json::array();
    for (size_t lv = 0; lv < s.levels.size(); ++lv) {
        const train::LevelStats& ls = s.levels[lv];
        out.push_back(json{{"level", lv},
                           {"count", ls.count},
                           {"mean", {ls.mean.x, ls.mean.y, ls.mean.z}},
                           {"std", {ls.std_dev.x, ls.std_dev.y, ls.std_dev.z}}});
    }
    return out;
}

train::NormStats norm_stats_from_json(const json& j) {
    train::NormStats s;
    for (const json& e : j) {
        const size_t lv = e.at("level").get<size_t>();
        if (s.levels.size() <= lv) s.levels.resize(lv + 1);
        train::LevelStats& ls = s.levels[lv];
        ls.count = e.at("count").get<std::int64_t>();
        const auto m = e.at("mean");
        const auto sd = e.at("std");
        ls.mean = {m.at(0).get<double>(), m.at(1).get<double>(), m.at(2).get<double>()};
        ls.std_dev = {sd.at(0).get<double>(), sd.at(1).get<double>(), sd.at(2).get<double>()};
    }
    return s;
}

namespace {

void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const std::string& buf, size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[off + i])) << (8 * i);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    json manifest;
    manifest["seed"] = ck.seed;
    manifest["model"] = model_config_to_json(ck.model.config());
    manifest["loss"] = loss_config_to_json(ck.loss);
    manifest["norm_stats"] = norm_stats_to_json(ck.stats);
    manifest["optimizer"] = json{{"step", ck.adam.step},
                                 {"beta1", ck.adam.beta1},
                                 {"beta2", ck.adam.beta2},
                                 {"eps", ck.adam.eps},
                                 {"lr_initial", ck.adam.schedule.initial},
                                 {"decay_steps", ck.adam.schedule.decay_steps}};

    std::vector<float> data;
    json arrays = json::array();
    auto append = [&](const std::string& name, const Tensor2& t) {
        arrays.push_back(json{{"name", name},
                              {"rows", t.rows},
                              {"cols", t.cols},
                              {"offset", data.size()}});
        for (double v : t.d) data.push_back(static_cast<float>(v));
    };
    for (const std::string& name : ck.model.params().names())
        append(name, ck.model.params().value(name));
    for (const auto& [name, t] : ck.adam.m) append("adam.m." + name, t);
    for (const auto& [name, t] : ck.adam.v) append("adam.v." + name, t);
    manifest["arrays"] = std::move(arrays);

    const std::string mstr = manifest.dump();
    std::string buf;
    buf.append(kCheckpointMagic, 4);
    put_u32(buf, kCheckpointVersion);
    put_u32(buf, static_cast<std::uint32_t>(mstr.size()));
    buf.append(mstr);
    for (float v : data) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        put_u32(buf, bits);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 12 || std::memcmp(buf.data(), kCheckpointMagic, 4) != 0)
        throw std::runtime_error("load_checkpoint: bad magic in " + path);
    if (get_u32(buf, 4) != kCheckpointVersion)
        throw std::runtime_error("load_checkpoint: unsupported version in " + path);
    const std::uint32_t mlen = get_u32(buf, 8);
    if (12 + static_cast<size_t>(mlen) > buf.size())
        throw std::runtime_error("load_checkpoint: truncated manifest in " + path);
    const json manifest = json::parse(buf.substr(12, mlen));

    Checkpoint ck;
    ck.seed = manifest.at("seed").get<std::uint64_t>();
    const model::ModelConfig cfg = model_config_from_json(manifest.at("model"));
    ck.model = model::HrnModel::init(cfg, ck.seed);
    ck.loss = loss_config_from_json(manifest.at("loss"));
    ck.stats = norm_stats_from_json(manifest.at("norm_stats"));
    const json& opt = manifest.at("optimizer");
    ck.adam.step = opt.at("step").get<std::int64_t>();
    ck.adam.beta1 = opt.at("beta1").get<double>();
    ck.adam.beta2 = opt.at("beta2").get<double>();
    ck.adam.eps = opt.at("eps").get<double>();
    ck.adam.schedule.initial = opt.at("lr_initial").get<double>();
    ck.adam.schedule.decay_steps = opt.at("decay_steps").get<std::vector<std::int64_t>>();

    const size_t data_off = 12 + mlen;
    const size_t n_floats = (buf.size() - data_off) / 4;
    auto read_tensor = [&](size_t offset, int rows, int cols) {
        Tensor2 t(rows, cols);
        if (offset + t.size() > n_floats)
            throw std::runtime_error("load_checkpoint: array out of range in " + path);
        for (size_t i = 0; i < t.size(); ++i) {
            const std::uint32_t bits = get_u32(buf, data_off + (offset + i) * 4);
            float v;
            std::memcpy(&v, &bits, 4);
            t.d[i] = static_cast<double>(v);
        }
        return t;
    };
    for (const json& a : manifest.at("arrays")) {
        const std::string name = a.at("name").get<std::string>();
        const Tensor2 t =
            read_tensor(a.at("offset").get<size_t>(), a.at("rows").get<int>(),
                        a.at("cols").get<int>());
        if (name.rfind("adam.m.", 0) == 0) {
            ck.adam.m[name.substr(7)] = t;
        } else if (name.rfind("adam.v.", 0) == 0) {
            ck.adam.v[name.substr(7)] = t;
        } else {
            Tensor2& dst = ck.model.params().value(name);
            if (!dst.same_shape(t))
                throw std::runtime_error("load_checkpoint: shape mismatch for " + name);
            dst = t;
        }
    }
    return ck;
}

}  // namespace hrn::io
