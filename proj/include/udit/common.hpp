#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace udit {

// Error taxonomy. Each family corresponds to one process exit code so that
// scripts driving the CLI can react without parsing messages:
//   ConfigError                          -> 2  (bad flags, bad config values)
//   DataError / IoError                  -> 3  (bad dataset, unreadable or
//                                               unwritable files)
//   ShapeError / CheckpointError / StateError -> 4  (checkpoint or tensor
//                                               shape mismatch, missing state)
//   anything else                        -> 1  (unexpected failure)
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Filesystem-level failures (missing file, unwritable directory). A subclass
// of DataError: callers that only care about the exit-code family can catch
// the base.
class IoError : public DataError {
 public:
  using DataError::DataError;
};

// Tensor plumbing errors: an operation was fed an array whose shape violates
// the operation's contract.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Serialized-state errors: corrupt or incompatible checkpoint files.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A required piece of runtime state is absent (e.g. pooling indices were
// never recorded but the decoder was asked to unpool with them).
class StateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training diverged (non-finite objective). Carries the serialized loss
// breakdown of the offending step so the failure is diagnosable post mortem.
class TrainError : public std::runtime_error {
 public:
  TrainError(const std::string& msg, std::string breakdown_json)
      : std::runtime_error(msg), breakdown_json_(std::move(breakdown_json)) {}
  const std::string& breakdown_json() const { return breakdown_json_; }

 private:
  std::string breakdown_json_;
};

namespace detail {
inline void format_into(std::ostringstream&) {}
template <typename Head, typename... Tail>
void format_into(std::ostringstream& os, const Head& h, const Tail&... t) {
  os << h;
  format_into(os, t...);
}
}  // namespace detail

// Tiny concatenating formatter (the toolchain's libstdc++ predates
// std::format).
template <typename... Args>
std::string cat(const Args&... args) {
  std::ostringstream os;
  detail::format_into(os, args...);
  return os.str();
}

template <typename E, typename... Args>
[[noreturn]] void fail(const Args&... args) {
  throw E(cat(args...));
}

// require<E>(cond, ...) — validate a precondition, throwing the taxonomy
// error E with a concatenated message on failure.
template <typename E, typename... Args>
void require(bool cond, const Args&... args) {
  if (!cond) fail<E>(args...);
}

inline std::string shape_str(const std::vector<int>& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

}  // namespace udit
