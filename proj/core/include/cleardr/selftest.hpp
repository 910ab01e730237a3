#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cleardr {

struct SelftestOptions {
  std::uint64_t seed = 1;
  // Debug hook: the adjoint under test sees a kernel with one weight nudged,
  // so the adjoint identity check must fail.
  bool perturb_adjoint = false;
};

struct CheckResult {
  std::string name;
  bool ok = false;
  std::string detail;
};

// Embedded oracle suite: adjoint identity, unpool adjoint, dense conv and
// back-projection equivalence, finite-difference gradient checks.
std::vector<CheckResult> run_selftest(const SelftestOptions& options = {});

}  // namespace cleardr
