#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace quip {

struct CheckResult {
    std::string id;
    bool        pass = false;
    std::string detail;
    double      seconds = 0.0;
};

struct VerifyOptions {
    uint64_t seed = 20240101;
    bool     quick = false;  // reduced sizes for development runs; the acceptance
                             // gate always runs the full criteria
    int      threads = 1;
};

// Suite ids: equivalence, losses, worstcase, tracebound, theorem3, incoherence,
// counterexample, greedy, clampsafe, roundtrip, determinism, all.
const std::vector<std::string> & verify_suites();

std::vector<CheckResult> run_suite(const std::string & suite, const VerifyOptions & opts);

}  // namespace quip
