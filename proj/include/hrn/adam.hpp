#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hrn/mlp.hpp"

namespace hrn {

// Stepwise learning-rate decay: starts at `initial`, divides by 2, 5, 2, 5...
// at each step listed in `decay_steps`.
struct LrSchedule {
    double initial = 1e-3;
    std::vector<std::int64_t> decay_steps;

    double at(std::int64_t step) const {
        double lr = initial;
        for (size_t i = 0; i < decay_steps.size(); ++i) {
            if (step >= decay_steps[i]) lr /= (i % 2 == 0) ? 2.0 : 5.0;
        }
        return lr;
    }
};

struct AdamState {
    std::int64_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    LrSchedule schedule;
    std::map<std::string, Tensor2> m;
    std::map<std::string, Tensor2> v;
};

// One bias-corrected Adam update from ps.grad into ps.value. Moment buffers
// are created on first use; shapes must match thereafter.
void adam_step(ParamStore& ps, AdamState& state);

}  // namespace hrn
