#include "qdpillar/error.hpp"

namespace qdpillar {

const char* to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::invalid_parameter: return "invalid-parameter";
    case ErrorKind::not_found: return "not-found";
    case ErrorKind::ambiguous_window: return "ambiguous-window";
    case ErrorKind::numerical_failure: return "numerical-failure";
    case ErrorKind::fit_failure: return "fit-failure";
    case ErrorKind::insufficient_data: return "insufficient-data";
    case ErrorKind::inconsistent_calibration: return "inconsistent-calibration";
    case ErrorKind::ambiguous_irf: return "ambiguous-irf";
    case ErrorKind::config: return "config";
    case ErrorKind::io: return "io";
    }
    return "unknown";
}

} // namespace qdpillar
