#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace iyolo {

// Dimension mismatch between tensors / kernel parameters.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A spec or configuration that violates its own invariants.
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// File-level failures (missing, unreadable, unwritable).
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed file content. Carries the byte offset (binary formats) or is
// constructed with a line number baked into the message (text formats).
struct ParseError : std::runtime_error {
    enum class Kind { BadMagic, Truncated, ShapeMismatch, BadValue, UnsupportedFormat };

    ParseError(Kind k, std::size_t byte_offset, const std::string& msg)
        : std::runtime_error(msg), kind(k), offset(byte_offset) {}

    Kind kind;
    std::size_t offset;
};

// Training loss blew past the divergence guard.
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace iyolo
