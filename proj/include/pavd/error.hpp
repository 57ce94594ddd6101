#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pavd {

enum class Errc {
  invalid_model,
  alpha_undefined,
  out_of_range,
  uncertified,
  subcritical,
  no_bracket,
  bound_violated,
  extinct,
  population_explosion,
  no_tilt,
  insufficient_tail,
  empty_input,
  too_large,
  missing_r,
  parse_error,
  io_error,
};

constexpr std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::invalid_model: return "InvalidModel";
    case Errc::alpha_undefined: return "AlphaUndefined";
    case Errc::out_of_range: return "OutOfRange";
    case Errc::uncertified: return "Uncertified";
    case Errc::subcritical: return "Subcritical";
    case Errc::no_bracket: return "NoBracket";
    case Errc::bound_violated: return "BoundViolated";
    case Errc::extinct: return "Extinct";
    case Errc::population_explosion: return "PopulationExplosion";
    case Errc::no_tilt: return "NoTilt";
    case Errc::insufficient_tail: return "InsufficientTail";
    case Errc::empty_input: return "EmptyInput";
    case Errc::too_large: return "TooLarge";
    case Errc::missing_r: return "MissingR";
    case Errc::parse_error: return "ParseError";
    case Errc::io_error: return "IoError";
  }
  return "Unknown";
}

// Single exception type for the library; callers switch on code().
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace pavd
