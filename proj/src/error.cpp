#include "kdadapt/error.hpp"

namespace kdadapt {

std::string_view category_name(ErrorCategory category) {
    switch (category) {
    case ErrorCategory::validation:
        return "validation";
    case ErrorCategory::alignment:
        return "alignment";
    case ErrorCategory::protocol:
        return "protocol";
    case ErrorCategory::io:
        return "io";
    case ErrorCategory::numeric:
        return "numeric";
    case ErrorCategory::usage:
        return "usage";
    }
    return "unknown";
}

} // namespace kdadapt
