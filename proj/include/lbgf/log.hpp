// Minimal diagnostic sink. Numerical safeguards (floors, truncations,
// symmetrizations) report here when they activate.
#pragma once

#include <iostream>
#include <ostream>
#include <string_view>

namespace lbgf::log {

inline std::ostream*& sink() {
  static std::ostream* s = &std::clog;
  return s;
}

/// Redirect diagnostics; pass nullptr to silence them.
inline void set_sink(std::ostream* s) { sink() = s; }

inline void note(std::string_view msg) {
  if (auto* s = sink()) *s << "[lbgf] " << msg << '\n';
}

}  // namespace lbgf::log
