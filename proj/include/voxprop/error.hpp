#pragma once

#include <stdexcept>
#include <string>

namespace voxprop {

// All library failures surface as this exception type. Callers that need to
// distinguish usage problems from runtime failures (the CLI does) check for
// InvalidArgument first.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw InvalidArgument(what);
}

}  // namespace voxprop
