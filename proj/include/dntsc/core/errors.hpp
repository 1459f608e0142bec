#pragma once

#include <stdexcept>
#include <string>

namespace dntsc {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/operand dimensions do not satisfy an operation's contract.
struct ShapeError : Error {
    using Error::Error;
};

// Non-finite or otherwise invalid input data.
struct InputError : Error {
    using Error::Error;
};

// A scalar parameter is outside its valid domain.
struct ParamError : Error {
    using Error::Error;
};

// Invalid or inconsistent configuration.
struct ConfigError : Error {
    using Error::Error;
};

// A coded stream failed to parse or violated coder state.
struct DecodeError : Error {
    using Error::Error;
};

// Segment lengths disagree with the rate plan.
struct FramingError : Error {
    using Error::Error;
};

// Dataset layout problems (unmatched pairs, empty directories, ...).
struct IngestError : Error {
    using Error::Error;
};

// Training diverged; message carries the last finite component snapshot.
struct TrainError : Error {
    using Error::Error;
};

// Projective normalization hit |d'| below the guard threshold.
struct DegenerateProjectionError : Error {
    DegenerateProjectionError(const std::string& msg, long point_index)
        : Error(msg), point(point_index) {}
    long point;
};

}  // namespace dntsc
