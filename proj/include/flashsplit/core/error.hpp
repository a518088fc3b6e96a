#pragma once

#include <stdexcept>
#include <string>

namespace flashsplit {

enum class ErrorKind {
    config,      // bad configuration value or unknown key
    contract,    // caller violated a documented precondition
    shape,       // dimension mismatch
    io,          // filesystem failure
    load,        // malformed dataset / checkpoint on disk
    training,    // numeric failure (NaN loss) during optimization
    usage,       // untrained state or missing artifact
    degenerate,  // input lacks the structure the algorithm needs
    mode,        // linear vs tonemapped mismatch
};

class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

  private:
    ErrorKind kind_;
};

[[noreturn]] inline void raise(ErrorKind k, const std::string& msg) { throw Error(k, msg); }

inline void require(bool cond, ErrorKind k, const std::string& msg) {
    if (!cond) raise(k, msg);
}

} // namespace flashsplit
