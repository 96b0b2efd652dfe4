#pragma once

#include <cstdint>
#include <iosfwd>

namespace gazediff {

struct GradCheckReport {
    double max_rel_err = 0.0;
    int64_t checks = 0;
    bool pass = false;
};

// Central finite differences (step 1e-5) against the recorded gradients, per
// differentiable op and through the full toy denoiser loss. Relative error
// uses max(|analytic|, |numeric|, 1e-3) as the denominator; the pass bound
// is 1e-4.
GradCheckReport run_gradcheck(uint64_t seeds, std::ostream * log = nullptr);

constexpr double kGradCheckTolerance = 1e-4;

} // namespace gazediff
