#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace unitgraph {

enum class errc {
  bad_magic,
  truncated,
  unsupported_link_type,
  malformed_header,
  schema_violation,
  unsupported_width,
  degenerate_segment,
  empty_sequence,
  shape_mismatch,
  empty_flow,
  degenerate_batch,
  class_too_small,
  non_finite_loss,
  io_error,
  invalid_config,
};

constexpr std::string_view to_string(errc code) {
  switch (code) {
    case errc::bad_magic: return "BadMagic";
    case errc::truncated: return "Truncated";
    case errc::unsupported_link_type: return "UnsupportedLinkType";
    case errc::malformed_header: return "MalformedHeader";
    case errc::schema_violation: return "SchemaViolation";
    case errc::unsupported_width: return "UnsupportedWidth";
    case errc::degenerate_segment: return "DegenerateSegment";
    case errc::empty_sequence: return "EmptySequence";
    case errc::shape_mismatch: return "ShapeMismatch";
    case errc::empty_flow: return "EmptyFlow";
    case errc::degenerate_batch: return "DegenerateBatch";
    case errc::class_too_small: return "ClassTooSmall";
    case errc::non_finite_loss: return "NonFiniteLoss";
    case errc::io_error: return "IoError";
    case errc::invalid_config: return "InvalidConfig";
  }
  return "Unknown";
}

// Every failure the library reports carries one of the codes above.
class error : public std::runtime_error {
 public:
  error(errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  errc code() const noexcept { return code_; }

 private:
  errc code_;
};

[[noreturn]] inline void fail(errc code, const std::string& what) { throw error(code, what); }

}  // namespace unitgraph
