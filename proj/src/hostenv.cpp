#include "residua/hostenv.hpp"

#include <cstdlib>

#if defined(__linux__) && defined(__x86_64__)
#include <unistd.h>
#endif

namespace residua {

void adopt_native_blas_kernel(char** argv) {
#if defined(__linux__) && defined(__x86_64__)
    if (std::getenv("OPENBLAS_CORETYPE") != nullptr) return;
    __builtin_cpu_init();
    const char* core = nullptr;
    if (__builtin_cpu_supports("avx512f")) {
        core = "SKYLAKEX";
    } else if (__builtin_cpu_supports("avx2")) {
        core = "HASWELL";
    }
    if (core == nullptr) return;
    ::setenv("OPENBLAS_CORETYPE", core, 1);
    ::execv("/proc/self/exe", argv);
    // exec failed; run with whatever kernel the loader picked
    ::unsetenv("OPENBLAS_CORETYPE");
#else
    (void)argv;
#endif
}

} // namespace residua
