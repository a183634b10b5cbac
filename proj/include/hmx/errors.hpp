#ifndef HMX_ERRORS_HPP
#define HMX_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace hmx {

/// Raised when a request exceeds a size guard (mesh level, dense materialization).
class capacity_error : public std::length_error {
public:
    explicit capacity_error(const std::string& what) : std::length_error(what) {}
};

/// Raised on non-conforming operand shapes.
class dimension_error : public std::invalid_argument {
public:
    explicit dimension_error(const std::string& what) : std::invalid_argument(what) {}
};

/// Raised when an argument violates a documented precondition.
class precondition_error : public std::invalid_argument {
public:
    explicit precondition_error(const std::string& what) : std::invalid_argument(what) {}
};

/// Malformed input: serialized operators, config files.
class format_error : public std::runtime_error {
public:
    explicit format_error(const std::string& what) : std::runtime_error(what) {}
};

} // namespace hmx

#endif // HMX_ERRORS_HPP
