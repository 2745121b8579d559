#pragma once

// Thin fork-join helper over OpenMP when available, serial otherwise.
// Callers keep determinism by accumulating into per-index buffers and
// reducing in index order (never into shared floats).

#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mcd {

inline int hardware_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

template <typename Fn>
void parallel_for(std::int64_t begin, std::int64_t end, const Fn& fn, int threads = 0) {
#ifdef _OPENMP
    if (threads <= 0) threads = omp_get_max_threads();
    if (threads > 1 && end - begin > 1) {
#pragma omp parallel for schedule(static) num_threads(threads)
        for (std::int64_t i = begin; i < end; ++i) fn(i);
        return;
    }
#else
    (void)threads;
#endif
    for (std::int64_t i = begin; i < end; ++i) fn(i);
}

} // namespace mcd
