#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace cct {

// Violated precondition or broken invariant (shape mismatch, consumed tape, ...).
class ContractError : public std::logic_error {
   public:
    using std::logic_error::logic_error;
};

// NaN/Inf produced somewhere. Treated as a hard error everywhere.
class NumericError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

class CorruptionError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

class LockError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

// Step label attached to numeric errors raised by primitives.
inline std::int64_t& numeric_step_context() {
    thread_local std::int64_t step = -1;
    return step;
}

}  // namespace cct
