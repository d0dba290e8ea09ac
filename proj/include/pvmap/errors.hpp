#pragma once

#include <stdexcept>
#include <string>

namespace pvmap {

// Bad or missing input data (unreadable file, malformed record, failed
// validation of a loaded value).  The CLI maps this to exit code 1.
class InputError : public std::runtime_error {
 public:
  explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

// Cross-image bookkeeping reached a state that needs manual review, e.g. two
// rows of the same frame ending up in one global line.  Exit code 2.
class ConflictError : public std::runtime_error {
 public:
  explicit ConflictError(const std::string& msg) : std::runtime_error(msg) {}
};

// Violated precondition inside the pipeline itself.  Exit code 3.
class InternalError : public std::runtime_error {
 public:
  explicit InternalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace pvmap
