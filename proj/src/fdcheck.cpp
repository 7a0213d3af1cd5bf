#include "hrn/fdcheck.hpp"

#include <algorithm>
#include <cmath>

namespace hrn {

FdReport fd_check_params(ParamStore& ps, const std::function<double()>& loss_fn,
                         std::mt19937_64& rng, const FdOptions& opt) {
    FdReport rep;
    const auto names = ps.names();
    if (names.empty()) return rep;
    std::uniform_int_distribution<size_t> pick_name(0, names.size() - 1);
    for (int s = 0; s < opt.samples; ++s) {
        const std::string& name = names[pick_name(rng)];
        Tensor2& p = ps.value(name);
        std::uniform_int_distribution<size_t> pick_idx(0, p.size() - 1);
        const size_t idx = pick_idx(rng);
        const double saved = p.d[idx];
        auto probe = [&](double h) {
            p.d[idx] = saved + h;
            const double up = loss_fn();
            p.d[idx] = saved - h;
            const double dn = loss_fn();
            p.d[idx] = saved;
            return (up - dn) / (2.0 * h);
        };
        const double fd = probe(opt.h);
        const double fd_half = probe(opt.h * 0.5);
        const double fd_scale = std::max({std::abs(fd), std::abs(fd_half), opt.zero_floor});
        if (std::abs(fd - fd_half) > 0.02 * fd_scale) {
            // Stencil straddles a ReLU kink; the FD estimate is not a valid
            // reference there.
            rep.skipped++;
            continue;
        }
        const double analytic = ps.grad(name).d[idx];
        if (std::abs(analytic) < opt.zero_floor && std::abs(fd) < opt.zero_floor) {
            rep.checked++;
            continue;
        }
        const double rel = std::abs(analytic - fd) / std::max(std::abs(analytic), std::abs(fd));
        rep.checked++;
        if (rel > rep.max_rel_err) {
            rep.max_rel_err = rel;
            rep.worst = name + "[" + std::to_string(idx) + "]";
        }
    }
    return rep;
}

}  // namespace hrn
