#ifndef TDCAL_ERRORS_HPP
#define TDCAL_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace tdcal {

// Error categories; values line up with CLI exit codes and C API status codes.
enum class ErrorCode {
    config = 2,
    data = 3,
    numeric = 4,
    io = 5,
    invalid_argument = 6,
    budget = 7,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, std::string msg)
        : std::runtime_error(std::move(msg)), code_(code) {}
    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

inline Error config_error(std::string msg) { return Error(ErrorCode::config, std::move(msg)); }
inline Error data_error(std::string msg) { return Error(ErrorCode::data, std::move(msg)); }
inline Error numeric_error(std::string msg) { return Error(ErrorCode::numeric, std::move(msg)); }
inline Error io_error(std::string msg) { return Error(ErrorCode::io, std::move(msg)); }
inline Error invalid_argument_error(std::string msg) { return Error(ErrorCode::invalid_argument, std::move(msg)); }
inline Error budget_error(std::string msg) { return Error(ErrorCode::budget, std::move(msg)); }

} // namespace tdcal

#endif
