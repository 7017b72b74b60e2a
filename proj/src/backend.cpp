#include "iyolo/backend.hpp"

#include "iyolo/errors.hpp"

namespace iyolo {

// IYOLO_HAVE_AVX2_TU is defined by the build exactly when the AVX2 kernels
// translation unit is compiled with real intrinsics.
bool avx2_available() {
#if defined(IYOLO_HAVE_AVX2_TU) && (defined(__GNUC__) || defined(__clang__))
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

namespace {
Backend g_backend = avx2_available() ? Backend::Avx2 : Backend::Scalar;
}

Backend active_backend() { return g_backend; }

void set_backend(Backend b) {
    if (b == Backend::Avx2 && !avx2_available()) {
        throw ValidationError("AVX2 backend requested but not available on this CPU");
    }
    g_backend = b;
}

const char* backend_name(Backend b) {
    return b == Backend::Avx2 ? "avx2" : "scalar";
}

}  // namespace iyolo
