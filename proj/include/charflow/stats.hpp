#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace charflow::stats {

// Pairwise summation: deterministic and accurate regardless of how the
// values were produced (chains may run on worker threads).
double pairwise_sum(std::span<const double> v);

struct Moments {
    std::size_t n = 0;
    double mean = 0.0;
    double var = 0.0;     // unbiased sample variance
    double stderr_mean = 0.0;
    double m4 = 0.0;      // central fourth moment (biased, plug-in)
};

Moments moments(std::span<const double> v);

// Standard error of the unbiased sample variance, from plug-in moments:
// Var(s^2) = (m4 - s^4 (n-3)/(n-1)) / n.
double variance_stderr(const Moments& m);

double normal_cdf(double z);

// Least-squares line fit with a 95% confidence half-width on the slope
// (Student t, n-2 df).
struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
    double slope_stderr = 0.0;
    double ci_half = 0.0;  // 95% half-width
    double residual_rms = 0.0;
};

LineFit fit_line(std::span<const double> x, std::span<const double> y);

// Binomial(n, p) probability mass function, full table (log-gamma based).
std::vector<double> binomial_pmf(int n, double p);

// Run fn(i) for i in [0, n) on up to `threads` workers. Each index writes
// only its own slots, so results are independent of the schedule.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

} // namespace charflow::stats
