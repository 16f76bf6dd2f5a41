#pragma once

#include <string>
#include <string_view>

#include "cadlab/error.hpp"

namespace cadlab {

/// How annotation coherence enters training.
enum class Regime {
  baseline,  // ignore coherence
  cad,       // coherence is a conditioning input
  filtered,  // drop the least coherent bins, ignore coherence otherwise
  weighted,  // per-sample loss weight equal to coherence
};

inline std::string_view to_string(Regime regime) {
  switch (regime) {
    case Regime::baseline: return "baseline";
    case Regime::cad: return "cad";
    case Regime::filtered: return "filtered";
    case Regime::weighted: return "weighted";
  }
  return "?";
}

inline Regime parse_regime(std::string_view text) {
  if (text == "baseline") return Regime::baseline;
  if (text == "cad") return Regime::cad;
  if (text == "filtered") return Regime::filtered;
  if (text == "weighted") return Regime::weighted;
  throw ContractViolation("unknown regime '" + std::string(text) +
                          "' (expected baseline|cad|filtered|weighted)");
}

}  // namespace cadlab
