#include "kernels_avx2.hpp"

#include <cstdlib>

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>
#endif

namespace iyolo::detail {

#if defined(__AVX2__) && defined(__FMA__)

namespace {

// Same accumulation as the scalar reference (double accumulator, ic -> ky ->
// kx), used for border columns the vector loop cannot cover.
double conv_pixel(const Tensor& input, const ConvParams& p, const float* wc, int y, int x) {
    const int H = input.height, W = input.width;
    const int k = p.kernel, pad = k / 2;
    double acc = 0;
    for (int ic = 0; ic < p.in_channels; ++ic) {
        const float* wk = wc + static_cast<std::size_t>(ic) * k * k;
        for (int ky = 0; ky < k; ++ky) {
            const int iy = y + ky - pad;
            if (iy < 0 || iy >= H) continue;
            const float* irow = input.row(ic, iy);
            for (int kx = 0; kx < k; ++kx) {
                const int ix = x + kx - pad;
                if (ix < 0 || ix >= W) continue;
                acc += static_cast<double>(wk[ky * k + kx]) * static_cast<double>(irow[ix]);
            }
        }
    }
    return acc;
}

}  // namespace

// Four output columns per step, one double accumulator per lane. Every
// float*float product is exact in double, so the fused multiply-add rounds
// identically to the scalar reference's add of the exact product.
void conv_core_avx2(const Tensor& input, const ConvParams& p, Tensor& out) {
    const int H = input.height, W = input.width;
    const int k = p.kernel, pad = k / 2;
    // Vector lanes x..x+3 must keep every ix = x + kx - pad inside the row.
    const int x_lo = pad;
    const int x_hi = W - pad - 4;  // last valid vector start
    for (int oc = 0; oc < p.out_channels; ++oc) {
        const float* wc = p.weights.data() + static_cast<std::size_t>(oc) * p.in_channels * k * k;
        for (int y = 0; y < H; ++y) {
            float* orow = out.row(oc, y);
            int x = 0;
            for (; x < x_lo && x < W; ++x) {
                orow[x] = static_cast<float>(conv_pixel(input, p, wc, y, x));
            }
            for (; x <= x_hi; x += 4) {
                __m256d acc = _mm256_setzero_pd();
                for (int ic = 0; ic < p.in_channels; ++ic) {
                    const float* wk = wc + static_cast<std::size_t>(ic) * k * k;
                    for (int ky = 0; ky < k; ++ky) {
                        const int iy = y + ky - pad;
                        if (iy < 0 || iy >= H) continue;
                        const float* irow = input.row(ic, iy);
                        for (int kx = 0; kx < k; ++kx) {
                            const __m256d w =
                                _mm256_set1_pd(static_cast<double>(wk[ky * k + kx]));
                            const __m256d v =
                                _mm256_cvtps_pd(_mm_loadu_ps(irow + x + kx - pad));
                            acc = _mm256_fmadd_pd(w, v, acc);
                        }
                    }
                }
                _mm_storeu_ps(orow + x, _mm256_cvtpd_ps(acc));
            }
            for (; x < W; ++x) {
                orow[x] = static_cast<float>(conv_pixel(input, p, wc, y, x));
            }
        }
    }
}

void maxpool2_avx2(const Tensor& input, Tensor& out) {
    const __m256i pick_even = _mm256_setr_epi32(0, 2, 4, 6, 1, 3, 5, 7);
    for (int c = 0; c < input.channels; ++c) {
        for (int y = 0; y < out.height; ++y) {
            const float* r0 = input.row(c, 2 * y);
            const float* r1 = input.row(c, 2 * y + 1);
            float* o = out.row(c, y);
            int x = 0;
            for (; x + 4 <= out.width; x += 4) {
                const __m256 a = _mm256_loadu_ps(r0 + 2 * x);
                const __m256 b = _mm256_loadu_ps(r1 + 2 * x);
                const __m256 m = _mm256_max_ps(a, b);
                const __m256 sw = _mm256_permute_ps(m, _MM_SHUFFLE(2, 3, 0, 1));
                const __m256 pairs = _mm256_max_ps(m, sw);
                const __m256 packed = _mm256_permutevar8x32_ps(pairs, pick_even);
                _mm_storeu_ps(o + x, _mm256_castps256_ps128(packed));
            }
            for (; x < out.width; ++x) {
                float m = r0[2 * x];
                if (r0[2 * x + 1] > m) m = r0[2 * x + 1];
                if (r1[2 * x] > m) m = r1[2 * x];
                if (r1[2 * x + 1] > m) m = r1[2 * x + 1];
                o[x] = m;
            }
        }
    }
}

void leaky_relu_avx2(const float* x, float* out, std::size_t n, float slope) {
    const __m256 zero = _mm256_setzero_ps();
    const __m256 s = _mm256_set1_ps(slope);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 v = _mm256_loadu_ps(x + i);
        const __m256 scaled = _mm256_mul_ps(v, s);
        const __m256 pos = _mm256_cmp_ps(v, zero, _CMP_GT_OQ);
        _mm256_storeu_ps(out + i, _mm256_blendv_ps(scaled, v, pos));
    }
    for (; i < n; ++i) {
        out[i] = x[i] > 0.0f ? x[i] : slope * x[i];
    }
}

#else  // no AVX2 at compile time: never selectable at runtime

void conv_core_avx2(const Tensor&, const ConvParams&, Tensor&) { std::abort(); }
void maxpool2_avx2(const Tensor&, Tensor&) { std::abort(); }
void leaky_relu_avx2(const float*, float*, std::size_t, float) { std::abort(); }

#endif

}  // namespace iyolo::detail
