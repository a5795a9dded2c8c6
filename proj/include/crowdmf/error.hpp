#pragma once

#include <stdexcept>
#include <string>

namespace crowdmf {

// Caller broke a documented precondition (bad index, mismatched lengths, ...).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Input data is malformed or cannot support the requested computation.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ContractViolation(what);
}

}  // namespace crowdmf
