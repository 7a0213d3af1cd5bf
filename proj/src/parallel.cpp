#include "hrn/parallel.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace hrn::par {

namespace {
int g_max_threads = 0;
bool g_deterministic = false;
}  // namespace

void set_max_threads(int n) { g_max_threads = n; }

int max_threads() {
    if (g_deterministic) return 1;
    if (g_max_threads > 0) return g_max_threads;
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void set_deterministic(bool on) { g_deterministic = on; }
bool deterministic() { return g_deterministic; }

int thread_count_for(std::int64_t work_items) {
#ifdef _OPENMP
    if (omp_in_parallel()) return 1;  // no nested teams
#endif
    int nt = max_threads();
    if (work_items < 2 * nt) return 1;  // not worth a team
    return nt;
}

}  // namespace hrn::par
