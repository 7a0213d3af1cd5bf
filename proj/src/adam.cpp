#include "hrn/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace hrn {

void adam_step(ParamStore& ps, AdamState& state) {
    const double lr = state.schedule.at(state.step);
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(state.beta1, t);
    const double bc2 = 1.0 - std::pow(state.beta2, t);
    for (const std::string& name : ps.names()) {
        Tensor2& p = ps.value(name);
        const Tensor2& g = ps.grad(name);
        Tensor2& m = state.m[name];
        Tensor2& v = state.v[name];
        if (m.size() == 0) m = Tensor2(p.rows, p.cols);
        if (v.size() == 0) v = Tensor2(p.rows, p.cols);
        if (!m.same_shape(p) || !g.same_shape(p))
            throw std::invalid_argument("adam_step: shape mismatch for " + name);
        for (size_t i = 0; i < p.size(); ++i) {
            m.d[i] = state.beta1 * m.d[i] + (1.0 - state.beta1) * g.d[i];
            v.d[i] = state.beta2 * v.d[i] + (1.0 - state.beta2) * g.d[i] * g.d[i];
            const double mhat = m.d[i] / bc1;
            const double vhat = v.d[i] / bc2;
            p.d[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

}  // namespace hrn
