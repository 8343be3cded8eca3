#pragma once

#include <stdexcept>

namespace panelmdp {

// Invalid or inconsistent configuration (bad field values, unknown keys,
// incompatible checkpoints). The CLI maps this to exit code 1.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A caller violated an operation precondition (illegal action, occupied
// slot, sampling an under-filled replay memory, ...).
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

// Stepping an episode whose time steps are exhausted (t >= K).
struct EpisodeExhaustedError : ContractError {
    using ContractError::ContractError;
};

// Non-finite values in numeric computations (losses, gradients).
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed or inconsistent data: unparsable files, feedback that does not
// match the trajectory, single-class AUC inputs.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace panelmdp
