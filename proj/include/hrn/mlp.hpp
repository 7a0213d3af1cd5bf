#pragma once

#include <map>
#include <random>
#include <string>
#include <vector>

#include "hrn/tape.hpp"
#include "hrn/tensor.hpp"

namespace hrn {

// Layer widths including input and output, e.g. {11, 64, 64, 32}.
// ReLU on hidden layers, identity on the output layer.
struct MlpSpec {
    std::vector<int> widths;

    int input_dim() const { return widths.front(); }
    int output_dim() const { return widths.back(); }
    int layers() const { return static_cast<int>(widths.size()) - 1; }
};

// Named parameter tensors plus matching gradient buffers. Iteration is in
// sorted name order everywhere, which keeps optimizer updates and checkpoint
// layouts deterministic.
class ParamStore {
public:
    Tensor2& create(const std::string& name, int rows, int cols);
    bool has(const std::string& name) const { return values_.count(name) != 0; }
    Tensor2& value(const std::string& name);
    const Tensor2& value(const std::string& name) const;
    Tensor2& grad(const std::string& name);
    const Tensor2& grad(const std::string& name) const;

    void zero_grads();
    std::vector<std::string> names() const;
    size_t scalar_count() const;
    const std::map<std::string, Tensor2>& values() const { return values_; }
    std::map<std::string, Tensor2>& values() { return values_; }

private:
    std::map<std::string, Tensor2> values_;
    std::map<std::string, Tensor2> grads_;
};

// Creates prefix.w0/.b0 ... with uniform fan-in init.
void init_mlp_params(ParamStore& ps, const std::string& prefix, const MlpSpec& spec,
                     std::mt19937_64& rng);

// Records affine + ReLU layers on the tape; returns the output node.
int mlp_forward(ad::Tape& tape, const ParamStore& ps, const std::string& prefix,
                const MlpSpec& spec, int input);

// Accumulates tape gradients of every bound parameter into ps.grad(...).
// Bindings are the (name, node) pairs produced while building the tape.
struct ParamBinding {
    std::string name;
    int node;
};

class ParamBinder {
public:
    explicit ParamBinder(const ParamStore& ps) : ps_(&ps) {}
    int bind(ad::Tape& tape, const std::string& name);
    const std::vector<ParamBinding>& bindings() const { return bindings_; }
    void accumulate_grads(const ad::Tape& tape, ParamStore& out, double scale = 1.0) const;

private:
    const ParamStore* ps_;
    std::vector<ParamBinding> bindings_;
};

int mlp_forward(ad::Tape& tape, ParamBinder& binder, const std::string& prefix,
                const MlpSpec& spec, int input);

}  // namespace hrn
