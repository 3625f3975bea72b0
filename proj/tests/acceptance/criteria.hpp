#pragma once

#include <functional>
#include <string>
#include <vector>

namespace acceptance {

struct Verdict {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string title;
  std::function<Verdict()> run;
};

// Double-precision criteria live in their own translation unit.
Verdict gradient_suite();
Verdict oracle_suite();
Verdict loss_identities();

Verdict architecture_contracts();
Verdict schedule();
Verdict learning();
Verdict determinism();
Verdict cli_pipeline();

}  // namespace acceptance
