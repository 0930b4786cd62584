#pragma once

#include <stdexcept>
#include <string>

namespace cicr {

// Temporal interval in normalized video time.
struct Span {
  double start = 0.0;
  double end = 0.0;

  double length() const { return end - start; }
  bool valid() const { return start < end; }
  bool operator==(const Span&) const = default;
};

inline void require_valid(const Span& s, const char* what) {
  if (!(s.start < s.end))
    throw std::invalid_argument(std::string(what) + ": degenerate interval [" + std::to_string(s.start) + ", " +
                                std::to_string(s.end) + "]");
}

}  // namespace cicr
