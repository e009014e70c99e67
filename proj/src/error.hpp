#ifndef WSSL_ERROR_HPP
#define WSSL_ERROR_HPP

#include <stdexcept>
#include <string>

namespace wssl {

// Mirrors the wssl_status codes of the C API.
enum class ErrorCode {
    invalid_argument = 1,
    config = 2,
    io = 3,
    protocol = 4,
    timeout = 5,
    internal = 6,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& msg)
        : std::runtime_error(msg), code_(code) {}

    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail_invalid(const std::string& msg) { throw Error(ErrorCode::invalid_argument, msg); }
[[noreturn]] inline void fail_config(const std::string& msg) { throw Error(ErrorCode::config, msg); }
[[noreturn]] inline void fail_io(const std::string& msg) { throw Error(ErrorCode::io, msg); }
[[noreturn]] inline void fail_protocol(const std::string& msg) { throw Error(ErrorCode::protocol, msg); }
[[noreturn]] inline void fail_timeout(const std::string& msg) { throw Error(ErrorCode::timeout, msg); }

} // namespace wssl

#endif
