#pragma once

#include <functional>
#include <random>
#include <string>

#include "hrn/mlp.hpp"

namespace hrn {

struct FdReport {
    double max_rel_err = 0.0;
    int checked = 0;
    int skipped = 0;  // coordinates where the FD estimate itself was unreliable
    std::string worst;
};

struct FdOptions {
    double h = 1e-5;
    int samples = 64;          // random parameter coordinates to probe
    double zero_floor = 1e-10; // both grads below this -> treated as matching
};

// Central-difference check of analytic gradients. `loss_fn` must re-evaluate
// the loss from the current ParamStore values; analytic gradients are read
// from ps.grad(...) as filled by the caller beforehand. Coordinates where the
// h and h/2 estimates disagree (ReLU kink within the stencil) are skipped and
// counted.
FdReport fd_check_params(ParamStore& ps, const std::function<double()>& loss_fn,
                         std::mt19937_64& rng, const FdOptions& opt = {});

}  // namespace hrn
