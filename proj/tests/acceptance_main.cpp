// Runs the acceptance criteria at the default desk-scale config and prints
// one PASS/FAIL line per criterion.
//
// Exit status: 0 when the suite ran to completion, even if some criteria
// fail (known failures are analysed in the README), 1 on an error. Pass
// --strict to exit 2 on any failed criterion.

#include <cstring>
#include <iostream>

#include "lead/acceptance.hpp"

int main(int argc, char** argv) {
  bool strict = false;
  lead::ExperimentConfig cfg;
  try {
    for (int i = 1; i < argc; ++i) {
      if (std::strcmp(argv[i], "--strict") == 0) {
        strict = true;
      } else if (std::strcmp(argv[i], "--config") == 0 && i + 1 < argc) {
        cfg = lead::ExperimentConfig::load(argv[++i]);
      } else if (std::strcmp(argv[i], "--set") == 0 && i + 1 < argc) {
        const std::string kv = argv[++i];
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw lead::Error("invalid-config", kv);
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
      } else {
        std::cerr << "usage: acceptance [--strict] [--config FILE] [--set key=value]...\n";
        return 1;
      }
    }
    const auto results = lead::run_acceptance(
        cfg, [](const lead::CriterionResult& r) { std::cout << lead::format_result(r) << std::endl; });
    std::size_t passed = 0;
    for (const auto& r : results) passed += r.pass;
    std::cout << passed << "/" << results.size() << " criteria passed" << std::endl;
    return strict && passed != results.size() ? 2 : 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
