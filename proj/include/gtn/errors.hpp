#ifndef GTN_ERRORS_HPP
#define GTN_ERRORS_HPP

#include <stdexcept>
#include <string>
#include <vector>

namespace gtn {

// Base class for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string &msg) : std::runtime_error(msg) {}
};

// Incompatible tensor shapes or axis pairs.
struct DimensionError : Error {
    using Error::Error;
};

// A spec or config fails its invariants; message names the offending field.
struct ValidationError : Error {
    using Error::Error;
};

// Malformed input file; message carries a byte offset or row number.
struct ParseError : Error {
    using Error::Error;
};

// Bad argument to an operation (empty dataset, size violation, ...).
struct InvalidArgumentError : Error {
    using Error::Error;
};

// Operation not defined for this object (e.g. table gradient of a fixed map).
struct UnsupportedOperationError : Error {
    using Error::Error;
};

// Oracle state-space guard exceeded.
struct ResourceError : Error {
    using Error::Error;
};

// Non-finite score during evaluation. Carries the per-string traces of the
// offending sample for diagnosis.
struct NumericOverflowError : Error {
    std::vector<double> string_traces;
    NumericOverflowError(const std::string &msg, std::vector<double> traces)
        : Error(msg), string_traces(std::move(traces)) {}
};

} // namespace gtn

#endif // GTN_ERRORS_HPP
