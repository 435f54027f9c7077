#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace dexined {

struct SelfcheckGroup {
  std::string name;  // gradients, fusion_init, scale_plan, matcher_oracle
  bool passed = false;
  std::string detail;
  double seconds = 0;
};

// Fast invariant suite. Groups run in a fixed order; on_group fires as each
// one finishes.
std::vector<SelfcheckGroup> run_selfcheck(std::uint64_t seed,
                                          const std::function<void(const SelfcheckGroup&)>& on_group = {});

}  // namespace dexined
