#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "advens/gradcheck.hpp"

namespace advens {

struct GradSuiteResult {
    int checks = 0;
    int failures = 0;
    double max_rel_err = 0.0;
    std::vector<std::string> failed_cases;

    bool pass() const { return failures == 0 && checks > 0; }
};

// Finite-difference sweep over every primitive, all three loss kinds, both
// architectures (input and parameter gradients) and the combined
// clean + rho*adversarial ensemble loss, repeated over `n_seeds` random draws.
GradSuiteResult gradcheck_suite(int n_seeds, double tol, std::ostream* log = nullptr);

}  // namespace advens
