#pragma once

#include <cstdint>

namespace hrn::par {

// Caps the number of OpenMP threads used by all kernels. 0 = runtime default.
void set_max_threads(int n);
int max_threads();

// Deterministic mode pins every kernel to one thread. Kernel outputs are
// bit-identical across thread counts by construction (each output element is
// owned by exactly one thread and accumulated in a fixed order); this switch
// exists so `--deterministic` runs make that guarantee trivially auditable.
void set_deterministic(bool on);
bool deterministic();

int thread_count_for(std::int64_t work_items);

// parallel_for(n, f) calls f(i) for i in [0, n). Static schedule.
template <class F>
void parallel_for(std::int64_t n, F&& f) {
    int nt = thread_count_for(n);
    if (nt <= 1) {
        for (std::int64_t i = 0; i < n; ++i) f(i);
        return;
    }
#pragma omp parallel for schedule(static) num_threads(nt)
    for (std::int64_t i = 0; i < n; ++i) f(i);
}

}  // namespace hrn::par
