#pragma once

#include <stdexcept>
#include <string>

namespace qdpillar {

enum class ErrorKind {
    invalid_parameter,
    not_found,
    ambiguous_window,
    numerical_failure,
    fit_failure,
    insufficient_data,
    inconsistent_calibration,
    ambiguous_irf,
    config,
    io,
};

const char* to_string(ErrorKind kind);

/// Base exception for every failure raised by the toolkit. The kind decides
/// how the command-line front end maps it onto an exit status.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

inline void require(bool condition, const std::string& message,
                    ErrorKind kind = ErrorKind::invalid_parameter) {
    if (!condition) throw Error(kind, message);
}

} // namespace qdpillar
