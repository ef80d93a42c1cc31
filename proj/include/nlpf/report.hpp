#pragma once

#include <cstdint>
#include <string>

namespace nlpf {

// One labeled energy evaluation. `local` is the perimeter term and `nonlocal`
// the interaction term where a route separates them; slicing routes only
// produce the total.
struct EnergyReport {
  std::string label;
  std::string route;
  double value = 0;
  double local = 0;
  double nonlocal = 0;
  double stderr_ = 0;
  double bound = 0;  // discretization bound on value, where the route has one
  std::uint64_t samples = 0;
  std::uint64_t seed = 0;
  std::uint64_t skipped = 0;  // lines dropped after repeated tangency
  bool flagged = false;
  std::string note;
};

} // namespace nlpf
