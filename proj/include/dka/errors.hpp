#pragma once

#include <stdexcept>
#include <string>

namespace dka {

/// Failure classes. The CLI maps them onto exit codes (config -> 2, numeric -> 3).
enum class ErrorKind {
    config,
    parameter_domain,
    degenerate_kernel,
    numeric,
    assumption_not_detectable,
    fixed_point_not_found,
    inconsistency,
    covariance,
    domain,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

    [[nodiscard]] bool is_config() const noexcept {
        return kind_ == ErrorKind::config || kind_ == ErrorKind::parameter_domain;
    }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) { throw Error(kind, msg); }

}  // namespace dka
