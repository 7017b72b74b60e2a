#pragma once

#include "iyolo/kernels.hpp"
#include "iyolo/tensor.hpp"

// AVX2 float lanes, compiled in their own translation unit with -mavx2 -mfma.
// Each keeps the scalar reference's per-element operation order so results
// are bit-identical (see backend.hpp).
namespace iyolo::detail {

void conv_core_avx2(const Tensor& input, const ConvParams& p, Tensor& out);
void maxpool2_avx2(const Tensor& input, Tensor& out);
void leaky_relu_avx2(const float* x, float* out, std::size_t n, float slope);

}  // namespace iyolo::detail
