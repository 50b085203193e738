#pragma once

#include <functional>
#include <span>
#include <vector>

namespace symdistill {

using Objective = std::function<double(std::span<const double>)>;

struct NelderMeadOptions {
    int max_evals = 2000;
    /// Initial simplex offset per coordinate: step * max(|x|, 1).
    double step = 0.1;
    /// Stop when the simplex's value spread falls below this.
    double ftol = 1e-14;
    double xtol = 1e-12;
};

struct OptimizeResult {
    std::vector<double> x;
    double value = 0.0;
    int evals = 0;
};

/// Downhill simplex. Non-finite objective values count as +inf.
OptimizeResult nelder_mead(const Objective& f, std::vector<double> x0, const NelderMeadOptions& options = {});

}  // namespace symdistill
