#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace usnav {

enum class Errc {
  PoseMissing,
  NavigationLost,
  Range,
  Parse,
  Order,
  Disconnected,
  FrameTooLarge,
  FrameDropped,
  EmptySweep,
  Budget,
  SeedConflict,
  EmptySegment,
  InvalidPoint,
  UnknownDevice,
  NotNavigating,
  NoClips,
  EmptyCohort,
  InvalidArgument,
  Io,
};

std::string_view to_string(Errc code);

// All library failures surface as usnav::Error carrying a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace usnav
