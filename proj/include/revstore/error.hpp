#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "revstore/fingerprint.hpp"

namespace revstore {

enum class Errc {
  invalid_argument,
  integrity,            // content does not match its declared fingerprint
  dangling_reference,   // a pointer chain reached a removed or unreferenced block
  invariant_violation,  // refcount underflow/overflow, bad removal victims
  at_most_once,         // second removal attempt on one segment
  not_found,
  out_of_order,         // version number is not latest + 1
  missing_segments,
  corruption,           // on-disk state is inconsistent (cycles, bad formats)
  io,
  network,
  rejected,             // server refused a request
};

std::string_view to_string(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// Raised when a version references segments the store cannot serve in full.
class MissingSegmentsError : public Error {
 public:
  explicit MissingSegmentsError(std::vector<Fingerprint> missing);

  const std::vector<Fingerprint>& missing() const noexcept { return missing_; }

 private:
  std::vector<Fingerprint> missing_;
};

[[noreturn]] void throw_errno(const std::string& what);

}  // namespace revstore
