#include "charflow/stats.hpp"

#include <algorithm>
#include <stdexcept>
#include <thread>

namespace charflow::stats {

double pairwise_sum(std::span<const double> v) {
    if (v.size() <= 16) {
        double s = 0.0;
        for (double x : v) s += x;
        return s;
    }
    const std::size_t half = v.size() / 2;
    return pairwise_sum(v.subspan(0, half)) + pairwise_sum(v.subspan(half));
}

Moments moments(std::span<const double> v) {
    Moments m;
    m.n = v.size();
    if (m.n == 0) return m;
    m.mean = pairwise_sum(v) / static_cast<double>(m.n);
    if (m.n < 2) return m;
    std::vector<double> d2(v.size()), d4(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double d = v[i] - m.mean;
        d2[i] = d * d;
        d4[i] = d2[i] * d2[i];
    }
    const double s2 = pairwise_sum(d2);
    m.var = s2 / static_cast<double>(m.n - 1);
    m.m4 = pairwise_sum(d4) / static_cast<double>(m.n);
    m.stderr_mean = std::sqrt(std::max(m.var, 0.0) / static_cast<double>(m.n));
    return m;
}

double variance_stderr(const Moments& m) {
    if (m.n < 4) return m.var;
    const double n = static_cast<double>(m.n);
    const double v = (m.m4 - m.var * m.var * (n - 3.0) / (n - 1.0)) / n;
    return std::sqrt(std::max(v, 0.0));
}

double normal_cdf(double z) {
    return 0.5 * std::erfc(-z / std::sqrt(2.0));
}

namespace {
// Two-sided 97.5% Student t quantiles for small df; asymptote 1.96.
double t_975(std::size_t df) {
    static const double table[] = {12.706, 4.303, 3.182, 2.776, 2.571,
                                   2.447,  2.365, 2.306, 2.262, 2.228};
    if (df == 0) return 12.706;
    if (df <= 10) return table[df - 1];
    if (df <= 20) return 2.09;
    return 1.96;
}
} // namespace

LineFit fit_line(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2)
        throw std::invalid_argument("fit_line: need >= 2 matching points");
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) { mx += x[i]; my += y[i]; }
    mx /= n; my /= n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    LineFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double ss_res = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double r = y[i] - (f.intercept + f.slope * x[i]);
        ss_res += r * r;
    }
    f.residual_rms = std::sqrt(ss_res / n);
    if (x.size() > 2) {
        f.slope_stderr = std::sqrt(ss_res / (n - 2.0) / sxx);
        f.ci_half = t_975(x.size() - 2) * f.slope_stderr;
    }
    return f;
}

std::vector<double> binomial_pmf(int n, double p) {
    std::vector<double> pmf(static_cast<std::size_t>(n) + 1);
    const double lp = std::log(p), lq = std::log1p(-p);
    const double lgn = std::lgamma(n + 1.0);
    for (int j = 0; j <= n; ++j) {
        const double l = lgn - std::lgamma(j + 1.0) - std::lgamma(n - j + 1.0)
                       + j * lp + (n - j) * lq;
        pmf[static_cast<std::size_t>(j)] = std::exp(l);
    }
    return pmf;
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
    const int workers = std::max(1, std::min<int>(threads, static_cast<int>(n)));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    const std::size_t chunk = (n + static_cast<std::size_t>(workers) - 1) / static_cast<std::size_t>(workers);
    for (int w = 0; w < workers; ++w) {
        const std::size_t lo = static_cast<std::size_t>(w) * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (std::size_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

} // namespace charflow::stats
