#pragma once

#include <stdexcept>
#include <string>

namespace amtl {

enum class ErrorKind {
  invalid_input,     // non-finite or malformed numeric input
  contract,          // precondition violated by the caller
  too_short,         // sentence below minimum length
  empty_corpus,      // requested corpus of size zero
  unknown_symbol,    // character not in the vocabulary
  length,            // sequence exceeds the model's maximum length
  version_mismatch,  // checkpoint format version not supported
  corrupt_file,      // truncated or malformed artifact file
  nondeterminism,    // function under test is not deterministic
  no_diff,           // diff requested on identical sequences
  divergence,        // training loss became non-finite
  config,            // bad configuration file or value
  io,                // file system failure
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::invalid_input: return "invalid_input";
    case ErrorKind::contract: return "contract";
    case ErrorKind::too_short: return "too_short";
    case ErrorKind::empty_corpus: return "empty_corpus";
    case ErrorKind::unknown_symbol: return "unknown_symbol";
    case ErrorKind::length: return "length";
    case ErrorKind::version_mismatch: return "version_mismatch";
    case ErrorKind::corrupt_file: return "corrupt_file";
    case ErrorKind::nondeterminism: return "nondeterminism";
    case ErrorKind::no_diff: return "no_diff";
    case ErrorKind::divergence: return "divergence";
    case ErrorKind::config: return "config";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(std::string(to_string(kind)) + ": " + msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
  throw Error(kind, msg);
}

inline void require(bool cond, ErrorKind kind, const std::string& msg) {
  if (!cond) fail(kind, msg);
}

}  // namespace amtl
