#include "treegpt/kernels.hpp"

#include <atomic>

namespace treegpt::kernels {

namespace {
std::atomic<Backend> g_backend{
#ifdef _OPENMP
    Backend::OpenMP
#else
    Backend::Serial
#endif
};
}  // namespace

Backend backend() noexcept { return g_backend.load(std::memory_order_relaxed); }

void set_backend(Backend b) noexcept { g_backend.store(b, std::memory_order_relaxed); }

bool openmp_available() noexcept {
#ifdef _OPENMP
    return true;
#else
    return false;
#endif
}

int thread_count() noexcept {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

}  // namespace treegpt::kernels
