#pragma once

#include <string>
#include <string_view>

#include "pbdetect/error.hpp"

namespace pbdetect {

/// Selects between the formulas exactly as printed and their corrected forms.
///
/// Three sites differ:
///  - standard deviation: `sqrt(acc / N)` (corrected) vs `acc / N` (printed)
///  - Gaussian membership: `exp(-z^2 / 2)` (corrected) vs `exp(-z / 2)` (printed)
///  - difference clearance: `|d| > c` (corrected) vs `d > c` (printed)
enum class FormulaMode { corrected, strict_paper };

struct FormulaSettings {
  FormulaMode mode = FormulaMode::corrected;
  bool sd_sqrt = true;
  bool gaussian_square = true;
  bool fod_abs = true;

  friend bool operator==(const FormulaSettings&, const FormulaSettings&) = default;
};

/// Flag values implied by a base mode, before any explicit override.
constexpr FormulaSettings formula_defaults(FormulaMode mode) {
  const bool corrected = mode == FormulaMode::corrected;
  return FormulaSettings{mode, corrected, corrected, corrected};
}

inline std::string_view to_string(FormulaMode mode) {
  return mode == FormulaMode::corrected ? "corrected" : "strict";
}

inline FormulaMode parse_formula_mode(std::string_view s) {
  if (s == "corrected") return FormulaMode::corrected;
  if (s == "strict" || s == "strict_paper") return FormulaMode::strict_paper;
  throw ConfigError("unknown formula mode '" + std::string(s) + "'");
}

/// Returns `cfg` with every formula site switched to `mode`'s variant.
/// Works with any config type exposing a `formula` member.
template <typename Config>
Config apply_mode(Config cfg, FormulaMode mode) {
  cfg.formula = formula_defaults(mode);
  return cfg;
}

/// True when every flag is what the base mode implies.
constexpr bool is_pure_mode(const FormulaSettings& f) {
  return f == formula_defaults(f.mode);
}

}  // namespace pbdetect
