#include "symdistill/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace symdistill {

OptimizeResult nelder_mead(const Objective& f, std::vector<double> x0, const NelderMeadOptions& opt) {
    const std::size_t n = x0.size();
    int evals = 0;
    auto eval = [&](const std::vector<double>& x) {
        ++evals;
        const double v = f(x);
        return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
    };
    if (n == 0) return {x0, eval(x0), evals};

    std::vector<std::vector<double>> pts(n + 1, x0);
    std::vector<double> vals(n + 1);
    for (std::size_t i = 0; i < n; ++i) pts[i + 1][i] += opt.step * std::max(std::abs(x0[i]), 1.0);
    for (std::size_t i = 0; i <= n; ++i) vals[i] = eval(pts[i]);

    std::vector<std::size_t> order(n + 1);
    std::vector<double> centroid(n), trial(n), trial2(n);
    auto along = [&](double t, std::vector<double>& out, const std::vector<double>& worst) {
        for (std::size_t j = 0; j < n; ++j) out[j] = centroid[j] + t * (worst[j] - centroid[j]);
    };
    while (evals < opt.max_evals) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
        {
            std::vector<std::vector<double>> p2;
            std::vector<double> v2;
            for (auto i : order) {
                p2.push_back(pts[i]);
                v2.push_back(vals[i]);
            }
            pts.swap(p2);
            vals.swap(v2);
        }
        double xspread = 0.0;
        for (std::size_t i = 1; i <= n; ++i)
            for (std::size_t j = 0; j < n; ++j) xspread = std::max(xspread, std::abs(pts[i][j] - pts[0][j]));
        if (std::isfinite(vals[n]) && vals[n] - vals[0] <= opt.ftol * std::max(1.0, std::abs(vals[0]))) break;
        if (xspread <= opt.xtol) break;

        std::fill(centroid.begin(), centroid.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) centroid[j] += pts[i][j] / static_cast<double>(n);
        const auto& worst = pts[n];
        along(-1.0, trial, worst);
        const double fr = eval(trial);
        if (fr < vals[0]) {
            along(-2.0, trial2, worst);
            const double fe = eval(trial2);
            if (fe < fr) {
                pts[n] = trial2;
                vals[n] = fe;
            } else {
                pts[n] = trial;
                vals[n] = fr;
            }
            continue;
        }
        if (fr < vals[n - 1]) {
            pts[n] = trial;
            vals[n] = fr;
            continue;
        }
        const bool outside = fr < vals[n];
        along(outside ? -0.5 : 0.5, trial2, worst);
        const double fc = eval(trial2);
        if (fc < (outside ? fr : vals[n])) {
            pts[n] = trial2;
            vals[n] = fc;
            continue;
        }
        for (std::size_t i = 1; i <= n; ++i) {
            for (std::size_t j = 0; j < n; ++j) pts[i][j] = pts[0][j] + 0.5 * (pts[i][j] - pts[0][j]);
            vals[i] = eval(pts[i]);
        }
    }
    const auto best = static_cast<std::size_t>(std::min_element(vals.begin(), vals.end()) - vals.begin());
    return {pts[best], vals[best], evals};
}

}  // namespace symdistill
