#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace nsde {

/// Input-contract violations (bad shapes, bad files, bad arguments).
/// The CLI maps these to exit code 1.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class DimensionError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// Malformed, truncated or corrupt files.
class FormatError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class VersionError : public FormatError {
public:
    using FormatError::FormatError;
};

/// Numerical failures at runtime. The CLI maps these to exit code 2.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A model produced a value that breaks its own invariants (e.g. sigma <= 0).
class ModelInvariantError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// Training diverged. `last_good_epoch` is -1 when the first epoch failed.
class TrainingError : public NumericalError {
public:
    TrainingError(const std::string& what, int last_good_epoch)
        : NumericalError(what), last_good_epoch_(last_good_epoch) {}
    int last_good_epoch() const noexcept { return last_good_epoch_; }

private:
    int last_good_epoch_;
};

/// Integration produced a non-finite or runaway state.
/// `prefix` holds every finite state reached before the failing step.
class IntegrationError : public NumericalError {
public:
    IntegrationError(const std::string& what, std::size_t step,
                     std::vector<std::vector<double>> prefix = {})
        : NumericalError(what), step_(step), prefix_(std::move(prefix)) {}
    std::size_t step() const noexcept { return step_; }
    const std::vector<std::vector<double>>& prefix() const noexcept { return prefix_; }

private:
    std::size_t step_;
    std::vector<std::vector<double>> prefix_;
};

}  // namespace nsde
