#pragma once

namespace iyolo {

// Kernel implementation selected at runtime. Scalar is the reference; the
// AVX2 lane keeps the reference's per-accumulator summation order (double
// accumulators), so both produce bit-identical outputs.
enum class Backend { Scalar, Avx2 };

// True when the CPU and OS support the AVX2+FMA lane.
bool avx2_available();

// Currently active backend. Defaults to the best available lane.
Backend active_backend();

// Force a backend (tests use this to compare lanes). Throws ValidationError
// if the requested lane is not available on this machine.
void set_backend(Backend b);

const char* backend_name(Backend b);

}  // namespace iyolo
