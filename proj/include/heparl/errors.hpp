#pragma once

#include <stdexcept>
#include <string>

namespace heparl {

/// Violated input contract or configuration constraint. The CLI maps this
/// to exit code 1; anything else escaping to main exits with 2.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

/// All importance weights vanished at a normalization point of a WIS-family
/// estimator. The cross-validation driver records the affected cell as
/// missing instead of aborting the experiment.
class DegenerateWeightsError : public std::runtime_error {
public:
    explicit DegenerateWeightsError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace heparl
