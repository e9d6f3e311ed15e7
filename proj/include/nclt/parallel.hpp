#pragma once

#include <cstdint>
#include <exception>
#include <mutex>
#include <utility>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace nclt::par {

// Replication loops in this project always write into pre-allocated,
// index-addressed slots and reduce serially afterwards, so the OpenMP
// and serial paths produce bitwise-identical results for any thread
// count. Keep it that way: a body must only touch state owned by its
// own index.

inline int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

inline void set_threads(int n) {
#ifdef _OPENMP
    if (n > 0) omp_set_num_threads(n);
#else
    (void)n;
#endif
}

// Serial reference implementation, kept for testing and benchmarking.
template <typename F>
void serial_for(std::int64_t n, F&& body) {
    for (std::int64_t i = 0; i < n; ++i) body(i);
}

// Exceptions cannot unwind out of an OpenMP region; the lowest-index one
// is captured and rethrown afterwards, matching what the serial path
// would have thrown first.
template <typename F>
void parallel_for(std::int64_t n, F&& body) {
#ifdef _OPENMP
    std::exception_ptr err;
    std::int64_t err_index = -1;
    std::mutex err_mutex;
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
        try {
            body(i);
        } catch (...) {
            std::lock_guard<std::mutex> lock(err_mutex);
            if (err_index < 0 || i < err_index) {
                err_index = i;
                err = std::current_exception();
            }
        }
    }
    if (err) std::rethrow_exception(err);
#else
    serial_for(n, std::forward<F>(body));
#endif
}

}  // namespace nclt::par
