#pragma once

#include <stdexcept>
#include <string>

namespace metricdiar {

// Base for every error raised by the library. The CLI maps the concrete
// kind onto an exit code (see exit_code_for).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class FormatError : public Error { using Error::Error; };
class TruncationError : public Error { using Error::Error; };
class ValidationError : public Error { using Error::Error; };
class IoError : public Error { using Error::Error; };
class ArgumentError : public Error { using Error::Error; };
class CapacityError : public Error { using Error::Error; };
class NumericError : public Error { using Error::Error; };
class EvaluationError : public Error { using Error::Error; };

// 2 for usage/validation problems, 3 for runtime/numeric failures.
int exit_code_for(const Error &e) noexcept;

} // namespace metricdiar
