#pragma once

#include <stdexcept>
#include <string>

namespace vectn {

// Runtime failure of a pipeline operation (bad input, backend failure,
// degenerate numerics). Mapped to exit status 1 by the CLI.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Misuse of the command-line surface. Mapped to exit status 2.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace vectn
