#pragma once

#include <stdexcept>
#include <string>

namespace cspace {

// Every recoverable failure in the library surfaces as cspace::Error with a
// message that is already formatted for end users. The CLI converts it into
// a machine-readable error JSON and a nonzero exit code.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

}  // namespace cspace
