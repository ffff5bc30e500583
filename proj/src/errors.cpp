#include "metricdiar/errors.hpp"

namespace metricdiar {

int exit_code_for(const Error &e) noexcept {
    if (dynamic_cast<const NumericError *>(&e) != nullptr ||
        dynamic_cast<const EvaluationError *>(&e) != nullptr ||
        dynamic_cast<const IoError *>(&e) != nullptr) {
        return 3;
    }
    return 2;
}

} // namespace metricdiar
