#pragma once

#include <string>
#include <vector>

namespace regstream {

// Outcome of one verification suite. A suite bundles the checks backing one
// numbered acceptance criterion; `messages` keeps the first few failure
// descriptions and `notes` carries headline numbers worth reporting even on
// success (training losses, timings).
struct CheckResult {
    std::string suite;
    int criterion = 0;
    int checks = 0;
    int failures = 0;
    std::vector<std::string> messages;
    std::vector<std::string> notes;

    bool passed() const { return checks > 0 && failures == 0; }
};

// Suite names in criterion order.
std::vector<std::string> suite_names();

// Run a single suite by name; throws std::invalid_argument for unknown names.
CheckResult run_suite(const std::string& name);

// Run everything in criterion order.
std::vector<CheckResult> run_all_suites();

}  // namespace regstream
