#pragma once

#include <stdexcept>
#include <string>

namespace d3hr {

// Bad input: violated precondition, malformed document, inconsistent sizes.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Filesystem failures (unreadable input, unwritable output).
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define D3HR_REQUIRE(cond, msg)                                   \
    do {                                                          \
        if (!(cond)) throw ::d3hr::ValidationError(std::string(msg)); \
    } while (0)

}  // namespace d3hr
