#pragma once

namespace residua {

/// OpenBLAS picks its compute kernel while the library is being loaded, long
/// before main runs, and on virtual machines that mask CPUID it can settle on
/// a pre-SSE3 fallback an order of magnitude slower than the hardware. When
/// OPENBLAS_CORETYPE is unset and the CPU advertises AVX-512 or AVX2, this
/// sets the variable accordingly and re-executes the current binary once so
/// the hint is seen at load time. No-op when the variable is already set,
/// when the CPU offers neither extension, or off Linux/x86-64.
void adopt_native_blas_kernel(char** argv);

} // namespace residua
