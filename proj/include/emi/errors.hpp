#pragma once

#include <stdexcept>
#include <string>

namespace emi {

// Invalid tensor or layer geometry: mismatched extents, bad axis, bad slice.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller broke an API contract: non-scalar loss, consumed tape,
// all-masked sequence, out-of-range label, mismatched id sets.
class ContractError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Config file problems: unknown keys or sections, unparsable values.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Filesystem and stream failures.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Feature-file codec failures. One kind per failure mode so callers can
// tell a bad magic from a truncated payload.
class CodecError : public std::runtime_error {
 public:
  enum class Kind {
    bad_magic,
    bad_version,
    bad_modality,
    dim_mismatch,
    non_finite,
    truncated,
  };

  CodecError(Kind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}

  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

}  // namespace emi
