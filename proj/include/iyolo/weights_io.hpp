#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "iyolo/network.hpp"

namespace iyolo {

// Binary weight container, little-endian throughout:
//   magic "IYW1", u32 version (=1), u32 num_classes, u32 anchor_count,
//   anchor_count * 2 f32 anchor (w,h) pairs, u32 trainable layer count,
//   then per conv layer: u32 layer_index, u8 has_bn,
//     has_bn ? f32[out] gamma, beta, mean, var : f32[out] bias,
//     f32[out*in*k*k] weights.
// Readers reject trailing bytes.

struct WeightsHeader {
    uint32_t version = 1;
    uint32_t num_classes = 0;
    std::vector<Anchor> anchors;
    uint32_t layer_count = 0;
};

void save_weights(const Network& net, const std::string& path);
void save_weights(const Network& net, std::ostream& out);

// Header/anchor/class fields must match the spec the caller built; parse
// failures throw ParseError with the offending byte offset.
void load_weights(Network& net, const std::string& path);
void load_weights(Network& net, std::istream& in);

// Reads only the fixed-size prefix, enough to pick an architecture.
WeightsHeader peek_weights(const std::string& path);

}  // namespace iyolo
