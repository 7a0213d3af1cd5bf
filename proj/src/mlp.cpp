#include "hrn/mlp.hpp"

#include <stdexcept>

namespace hrn {

Tensor2& ParamStore::create(const std::string& name, int rows, int cols) {
    if (values_.count(name)) throw std::invalid_argument("ParamStore: duplicate param " + name);
    values_[name] = Tensor2(rows, cols);
    grads_[name] = Tensor2(rows, cols);
    return values_[name];
}

Tensor2& ParamStore::value(const std::string& name) {
    auto it = values_.find(name);
    if (it == values_.end()) throw std::invalid_argument("ParamStore: unknown param " + name);
    return it->second;
}

const Tensor2& ParamStore::value(const std::string& name) const {
    auto it = values_.find(name);
    if (it == values_.end()) throw std::invalid_argument("ParamStore: unknown param " + name);
    return it->second;
}

Tensor2& ParamStore::grad(const std::string& name) {
    auto it = grads_.find(name);
    if (it == grads_.end()) throw std::invalid_argument("ParamStore: unknown param " + name);
    return it->second;
}

const Tensor2& ParamStore::grad(const std::string& name) const {
    auto it = grads_.find(name);
    if (it == grads_.end()) throw std::invalid_argument("ParamStore: unknown param " + name);
    return it->second;
}

void ParamStore::zero_grads() {
    for (auto& [name, g] : grads_) g.zero();
}

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    out.reserve(values_.size());
    for (const auto& [name, v] : values_) out.push_back(name);
    return out;
}

size_t ParamStore::scalar_count() const {
    size_t n = 0;
    for (const auto& [name, v] : values_) n += v.size();
    return n;
}

void init_mlp_params(ParamStore& ps, const std::string& prefix, const MlpSpec& spec,
                     std::mt19937_64& rng) {
    if (spec.widths.size() < 2) throw std::invalid_argument("MlpSpec: need at least 2 widths");
    for (int l = 0; l < spec.layers(); ++l) {
        const int fan_in = spec.widths[l];
        const int fan_out = spec.widths[l + 1];
        Tensor2& w = ps.create(prefix + ".w" + std::to_string(l), fan_in, fan_out);
        init_fan_in(w, fan_in, rng);
        Tensor2& b = ps.create(prefix + ".b" + std::to_string(l), 1, fan_out);
        init_fan_in(b, fan_in, rng);
    }
}

int ParamBinder::bind(ad::Tape& tape, const std::string& name) {
    int node = tape.param(&ps_->value(name));
    bindings_.push_back({name, node});
    return node;
}

void ParamBinder::accumulate_grads(const ad::Tape& tape, ParamStore& out, double scale) const {
    for (const auto& b : bindings_) {
        const Tensor2& g = tape.grad(b.node);
        Tensor2& dst = out.grad(b.name);
        if (!g.same_shape(dst)) throw std::logic_error("accumulate_grads: shape drift");
        for (size_t i = 0; i < g.size(); ++i) dst.d[i] += scale * g.d[i];
    }
}

static int mlp_forward_impl(ad::Tape& tape, const MlpSpec& spec, int input,
                            const std::vector<int>& wnodes, const std::vector<int>& bnodes) {
    if (tape.value(input).cols != spec.input_dim())
        throw std::invalid_argument("mlp_forward: input width mismatch");
    int h = input;
    for (int l = 0; l < spec.layers(); ++l) {
        h = tape.add_bias(tape.matmul(h, wnodes[l]), bnodes[l]);
        if (l + 1 < spec.layers()) h = tape.relu(h);
    }
    return h;
}

int mlp_forward(ad::Tape& tape, const ParamStore& ps, const std::string& prefix,
                const MlpSpec& spec, int input) {
    std::vector<int> wn, bn;
    for (int l = 0; l < spec.layers(); ++l) {
        wn.push_back(tape.param(&ps.value(prefix + ".w" + std::to_string(l))));
        bn.push_back(tape.param(&ps.value(prefix + ".b" + std::to_string(l))));
    }
    return mlp_forward_impl(tape, spec, input, wn, bn);
}

int mlp_forward(ad::Tape& tape, ParamBinder& binder, const std::string& prefix,
                const MlpSpec& spec, int input) {
    std::vector<int> wn, bn;
    for (int l = 0; l < spec.layers(); ++l) {
        wn.push_back(binder.bind(tape, prefix + ".w" + std::to_string(l)));
        bn.push_back(binder.bind(tape, prefix + ".b" + std::to_string(l)));
    }
    return mlp_forward_impl(tape, spec, input, wn, bn);
}

}  // namespace hrn
