#pragma once

#include <stdexcept>
#include <string>

namespace demenscan {

// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor/layer shape disagreement; message carries both shapes.
struct ShapeError : Error {
    using Error::Error;
};

// Invalid scalar argument (distribution params, labels, rates, config values).
struct ParameterError : Error {
    using Error::Error;
};

// Dataset directory layout problems (missing class dir, empty class, unreadable file).
struct LayoutError : Error {
    using Error::Error;
};

// Image file cannot be decoded.
struct DecodeError : Error {
    using Error::Error;
};

// Checkpoint file rejected (magic, version, CRC, truncation).
struct CheckpointError : Error {
    using Error::Error;
};

// Rendering rejected (non-finite map values).
struct RenderError : Error {
    using Error::Error;
};

// Training aborted (non-finite loss); message carries epoch and batch.
struct TrainError : Error {
    using Error::Error;
};

// Generic filesystem/IO failure.
struct IoError : Error {
    using Error::Error;
};

} // namespace demenscan
