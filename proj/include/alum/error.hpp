// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace alum {

/// Failure categories. The CLI prints the class name as a single
/// machine-parsable token, so the strings below are part of the interface.
enum class ErrorKind {
    input_not_found,
    invalid_config,
    invalid_input,
    shape_mismatch,
    non_finite,
    io_error,
};

constexpr std::string_view error_class(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::input_not_found: return "input-not-found";
    case ErrorKind::invalid_config: return "invalid-config";
    case ErrorKind::invalid_input: return "invalid-input";
    case ErrorKind::shape_mismatch: return "shape-mismatch";
    case ErrorKind::non_finite: return "non-finite";
    case ErrorKind::io_error: return "io-error";
    }
    return "internal";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

} // namespace alum
