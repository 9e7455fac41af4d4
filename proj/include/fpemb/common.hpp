#pragma once

#include <stdexcept>
#include <string>

namespace fpemb {

// Error taxonomy shared by all modules. The CLI maps kinds onto exit codes
// (config/parameter -> 2, input/data -> 3), everything else is a plain
// runtime failure for the caller to handle.
enum class ErrorKind {
  kInput,
  kFormat,
  kRange,
  kParameter,
  kContract,
  kData,
  kNumerical,
  kSplit,
  kProtocol,
  kLookup,
  kConfig,
  kEmptyDataset,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
  throw Error(kind, msg);
}

#define FPEMB_CHECK(cond, kind, msg) \
  do {                               \
    if (!(cond)) ::fpemb::fail(kind, msg); \
  } while (0)

}  // namespace fpemb
