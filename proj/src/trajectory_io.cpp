#include "hrn/trajectory_io.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace hrn::io {

using nlohmann::json;

namespace {

void put_u32(std::string& buf, std::uint32_t v) {
    buf.push_back(static_cast<char>(v & 0xFF));
    buf.push_back(static_cast<char>((v >> 8) & 0xFF));
    buf.push_back(static_cast<char>((v >> 16) & 0xFF));
    buf.push_back(static_cast<char>((v >> 24) & 0xFF));
}

std::uint32_t get_u32(const std::string& buf, size_t off) {
    return static_cast<std::uint8_t>(buf[off]) |
           (static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[off + 1])) << 8) |
           (static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[off + 2])) << 16) |
           (static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[off + 3])) << 24);
}

void put_f32(std::string& buf, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(buf, bits);
}

float get_f32(const std::string& buf, size_t off) {
    const std::uint32_t bits = get_u32(buf, off);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

json vec3_to_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

Vec3 vec3_from_json(const json& j) {
    return Vec3{j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

json relations_to_json(const std::vector<Relation>& rels) {
    json out = json::array();
    for (const Relation& r : rels)
        out.push_back(json::array({r.sender, r.receiver, static_cast<int>(r.kind), r.material}));
    return out;
}

std::vector<Relation> relations_from_json(const json& j) {
    std::vector<Relation> out;
    out.reserve(j.size());
    for (const json& e : j) {
        Relation r;
        r.sender = e.at(0).get<int>();
        r.receiver = e.at(1).get<int>();
        r.kind = static_cast<RelKind>(e.at(2).get<int>());
        r.material = e.at(3).get<std::vector<double>>();
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace

void finalize_hierarchy(HierarchyGraph& h, const SceneGraph& scene) {
    const int M = static_cast<int>(h.level.size());
    h.children.assign(M, {});
    for (int i = 0; i < M; ++i)
        if (h.parent[i] >= 0) h.children[h.parent[i]].push_back(i);
    for (auto& c : h.children) std::sort(c.begin(), c.end());

    int n_objects = 0;
    for (int o : h.object_id) n_objects = std::max(n_objects, o + 1);
    h.roots.assign(n_objects, -1);
    for (int i = 0; i < M; ++i)
        if (h.parent[i] < 0) h.roots[h.object_id[i]] = i;

    // leaves CSR via upward walks
    std::vector<std::vector<int>> per_node(M);
    for (int l = 0; l < h.leaf_count; ++l) {
        per_node[l].push_back(l);
        for (int a = h.parent[l]; a >= 0; a = h.parent[a]) per_node[a].push_back(l);
    }
    h.leaves_offsets.assign(M + 1, 0);
    for (int i = 0; i < M; ++i) {
        std::sort(per_node[i].begin(), per_node[i].end());
        h.leaves_offsets[i + 1] = h.leaves_offsets[i] + static_cast<int>(per_node[i].size());
    }
    h.leaves_list.clear();
    for (int i = 0; i < M; ++i)
        h.leaves_list.insert(h.leaves_list.end(), per_node[i].begin(), per_node[i].end());

    // node states from scene leaves
    h.nodes.resize(M);
    for (int i = 0; i < h.leaf_count; ++i) h.nodes[i] = scene.particles[i];
    for (int i = h.leaf_count; i < M; ++i) {
        std::vector<Particle> leaf_states;
        for (int l : h.leaves_of(i)) leaf_states.push_back(scene.particles[l]);
        h.nodes[i] = aggregate_node(leaf_states);
    }
}

void write_trajectory(const std::string& path, const sim::Trajectory& traj) {
    const int n = traj.particle_count();
    const int frames = traj.frame_count();
    const sim::TrajectoryHeader& hd = traj.header;

    json h;
    h["scenario"] = hd.scenario;
    h["seed"] = hd.seed;
    h["dt"] = hd.dt;
    h["gravity"] = vec3_to_json(hd.gravity);
    h["spacing"] = hd.spacing;
    h["particle_count"] = n;
    h["frame_count"] = frames;
    h["object_id"] = hd.scene.object_id;
    {
        std::vector<double> mass(n);
        for (int i = 0; i < n; ++i) mass[i] = hd.scene.particles[i].mass;
        h["mass"] = mass;
    }
    {
        std::vector<int> st(hd.static_mask.begin(), hd.static_mask.end());
        h["static"] = st;
    }
    h["relations"] = relations_to_json(hd.scene.relations);
    h["resets"] = hd.resets;
    json hj;
    hj["leaf_count"] = hd.hierarchy.leaf_count;
    hj["material_dim"] = hd.hierarchy.material_dim;
    hj["level"] = hd.hierarchy.level;
    hj["parent"] = hd.hierarchy.parent;
    hj["object_id"] = hd.hierarchy.object_id;
    hj["node_material"] = hd.hierarchy.node_material;
    hj["kinship"] = relations_to_json(hd.hierarchy.kinship);
    h["hierarchy"] = std::move(hj);

    const std::string header = h.dump();
    std::string buf;
    buf.reserve(16 + header.size() + static_cast<size_t>(frames) * n * 9 * 4);
    buf.append(kTrajectoryMagic, 4);
    put_u32(buf, kTrajectoryVersion);
    put_u32(buf, static_cast<std::uint32_t>(header.size()));
    buf.append(header);
    for (const sim::Frame& fr : traj.frames) {
        for (const Vec3& v : fr.pos) {
            put_f32(buf, static_cast<float>(v.x));
            put_f32(buf, static_cast<float>(v.y));
            put_f32(buf, static_cast<float>(v.z));
        }
        for (const Vec3& v : fr.vel) {
            put_f32(buf, static_cast<float>(v.x));
            put_f32(buf, static_cast<float>(v.y));
            put_f32(buf, static_cast<float>(v.z));
        }
        for (const Vec3& v : fr.force) {
            put_f32(buf, static_cast<float>(v.x));
            put_f32(buf, static_cast<float>(v.y));
            put_f32(buf, static_cast<float>(v.z));
        }
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("write_trajectory: cannot open " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::runtime_error("write_trajectory: write failed for " + path);
}

sim::Trajectory read_trajectory(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_trajectory: cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    auto fail = [&](size_t offset, const std::string& what) {
        throw std::runtime_error("read_trajectory: " + what + " at byte offset " +
                                 std::to_string(offset) + " in " + path);
    };
    if (buf.size() < 12) fail(buf.size(), "truncated container (needs 12-byte prologue)");
    if (std::memcmp(buf.data(), kTrajectoryMagic, 4) != 0) fail(0, "bad magic (expected HRNT)");
    const std::uint32_t version = get_u32(buf, 4);
    if (version != kTrajectoryVersion) fail(4, "unsupported version " + std::to_string(version));
    const std::uint32_t hlen = get_u32(buf, 8);
    if (12 + static_cast<size_t>(hlen) > buf.size()) fail(12, "truncated header");

    json h;
    try {
        h = json::parse(buf.substr(12, hlen));
    } catch (const std::exception& e) {
        fail(12, std::string("header parse error: ") + e.what());
    }

    sim::Trajectory traj;
    sim::TrajectoryHeader& hd = traj.header;
    hd.scenario = h.at("scenario").get<std::string>();
    hd.seed = h.at("seed").get<std::uint64_t>();
    hd.dt = h.at("dt").get<double>();
    hd.gravity = vec3_from_json(h.at("gravity"));
    hd.spacing = h.at("spacing").get<double>();
    const int n = h.at("particle_count").get<int>();
    const int frames = h.at("frame_count").get<int>();
    hd.scene.object_id = h.at("object_id").get<std::vector<int>>();
    const std::vector<double> mass = h.at("mass").get<std::vector<double>>();
    const std::vector<int> st = h.at("static").get<std::vector<int>>();
    if (static_cast<int>(hd.scene.object_id.size()) != n || static_cast<int>(mass.size()) != n ||
        static_cast<int>(st.size()) != n)
        fail(12, "header arrays inconsistent with particle_count");
    hd.static_mask.assign(st.begin(), st.end());
    hd.scene.relations = relations_from_json(h.at("relations"));
    hd.resets = h.at("resets").get<std::vector<int>>();

    const json& hj = h.at("hierarchy");
    hd.hierarchy.leaf_count = hj.at("leaf_count").get<int>();
    hd.hierarchy.material_dim = hj.at("material_dim").get<int>();
    hd.hierarchy.level = hj.at("level").get<std::vector<int>>();
    hd.hierarchy.parent = hj.at("parent").get<std::vector<int>>();
    hd.hierarchy.object_id = hj.at("object_id").get<std::vector<int>>();
    hd.hierarchy.node_material = hj.at("node_material").get<std::vector<std::vector<double>>>();
    hd.hierarchy.kinship = relations_from_json(hj.at("kinship"));

    const size_t payload_off = 12 + hlen;
    const size_t expect = static_cast<size_t>(frames) * n * 9 * 4;
    if (buf.size() - payload_off < expect)
        fail(buf.size(), "truncated payload (expected " + std::to_string(expect) + " bytes from " +
                             std::to_string(payload_off) + ")");
    if (buf.size() - payload_off > expect)
        fail(payload_off + expect, "trailing bytes after payload");

    size_t off = payload_off;
    traj.frames.resize(frames);
    for (int f = 0; f < frames; ++f) {
        sim::Frame& fr = traj.frames[f];
        fr.pos.resize(n);
        fr.vel.resize(n);
        fr.force.resize(n);
        auto read_block = [&](std::vector<Vec3>& dst) {
            for (int i = 0; i < n; ++i) {
                dst[i].x = get_f32(buf, off);
                dst[i].y = get_f32(buf, off + 4);
                dst[i].z = get_f32(buf, off + 8);
                off += 12;
            }
        };
        read_block(fr.pos);
        read_block(fr.vel);
        read_block(fr.force);
    }

    // reconstruct the initial scene from frame 0
    hd.scene.particles.resize(n);
    for (int i = 0; i < n; ++i) {
        hd.scene.particles[i].position = traj.frames.empty() ? Vec3{} : traj.frames[0].pos[i];
        hd.scene.particles[i].velocity = traj.frames.empty() ? Vec3{} : traj.frames[0].vel[i];
        hd.scene.particles[i].mass = mass[i];
    }
    finalize_hierarchy(hd.hierarchy, hd.scene);
    return traj;
}

}  // namespace hrn::io
