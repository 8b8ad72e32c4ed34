// Runs every verification suite in criterion order and prints one line per
// criterion. Exits nonzero if any suite fails.

#include <cstdio>

#include "regstream/verify.hpp"

int main() {
    const std::vector<regstream::CheckResult> results = regstream::run_all_suites();
    int failed = 0;
    for (const regstream::CheckResult& r : results) {
        std::printf("[%s] criterion %2d  %-24s %5d checks  %d failures\n",
                    r.passed() ? "PASS" : "FAIL", r.criterion, r.suite.c_str(), r.checks,
                    r.failures);
        for (const std::string& note : r.notes) std::printf("        %s\n", note.c_str());
        if (!r.passed()) {
            ++failed;
            for (const std::string& msg : r.messages) std::printf("        ! %s\n", msg.c_str());
        }
    }
    std::printf("%s: %zu/%zu criteria satisfied\n", failed == 0 ? "ACCEPTED" : "REJECTED",
                results.size() - failed, results.size());
    return failed == 0 ? 0 : 1;
}
