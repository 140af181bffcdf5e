#pragma once

#include <stdexcept>
#include <string>

namespace lrdif {

// Bad configuration, flags, or incompatible model/checkpoint settings.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Missing, malformed, or tampered files.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// NaN/Inf produced by a primitive or a loss.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Operand shapes incompatible with a primitive or a layer.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

}  // namespace lrdif
