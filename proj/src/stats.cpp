#include "segqa/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "segqa/error.hpp"

namespace segqa::stats {

namespace {

constexpr int kMaxIterations = 10000;
constexpr double kTiny = 1e-300;

// Modified Lentz evaluation of the incomplete beta continued fraction.
double beta_fraction(double a, double b, double x) {
    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIterations; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kSpecialTolerance) return h;
    }
    throw Error("incomplete_beta: continued fraction did not converge");
}

double gamma_series(double a, double x) {
    double ap = a;
    double del = 1.0 / a;
    double sum = del;
    for (int n = 0; n < kMaxIterations; ++n) {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if (std::fabs(del) < std::fabs(sum) * kSpecialTolerance)
            return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
    }
    throw Error("gamma_p: series did not converge");
}

double gamma_fraction(double a, double x) {
    double b = x + 1.0 - a;
    double c = 1.0 / kTiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= kMaxIterations; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = b + an / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kSpecialTolerance)
            return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
    }
    throw Error("gamma_q: continued fraction did not converge");
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0)) throw InvalidArgument("incomplete_beta: a, b must be > 0");
    if (!(x >= 0.0 && x <= 1.0)) throw InvalidArgument("incomplete_beta: x outside [0, 1]");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    const double front = std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                                  a * std::log(x) + b * std::log1p(-x));
    // The fraction converges fastest on the side of the distribution's mean.
    if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_fraction(a, b, x) / a;
    return 1.0 - front * beta_fraction(b, a, 1.0 - x) / b;
}

double gamma_p(double a, double x) {
    if (!(a > 0.0)) throw InvalidArgument("gamma_p: a must be > 0");
    if (!(x >= 0.0)) throw InvalidArgument("gamma_p: x must be >= 0");
    if (x == 0.0) return 0.0;
    if (x < a + 1.0) return gamma_series(a, x);
    return 1.0 - gamma_fraction(a, x);
}

double gamma_q(double a, double x) {
    if (!(a > 0.0)) throw InvalidArgument("gamma_q: a must be > 0");
    if (!(x >= 0.0)) throw InvalidArgument("gamma_q: x must be >= 0");
    if (x == 0.0) return 1.0;
    if (x < a + 1.0) return 1.0 - gamma_series(a, x);
    return gamma_fraction(a, x);
}

double student_t_two_sided(double t, double df) {
    if (!(df > 0.0)) throw InvalidArgument("student_t_two_sided: df must be > 0");
    if (std::isinf(t)) return 0.0;
    return incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
}

double chi_squared_upper(double x, double df) {
    if (!(df > 0.0)) throw InvalidArgument("chi_squared_upper: df must be > 0");
    if (x <= 0.0) return 1.0;
    return gamma_q(0.5 * df, 0.5 * x);
}

std::string to_string(TestKind kind) {
    return kind == TestKind::kPairedT ? "paired_t" : "chi_squared";
}

TestResult paired_t_test(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size())
        throw ShapeError("paired_t_test: sample lengths differ (" + std::to_string(x.size()) +
                         " vs " + std::to_string(y.size()) + ")");
    const std::size_t n = x.size();
    if (n < 2) throw InvalidArgument("paired_t_test: need at least 2 pairs, got " +
                                     std::to_string(n));
    double mean = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mean += x[i] - y[i];
        scale = std::max({scale, std::abs(x[i]), std::abs(y[i])});
    }
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = (x[i] - y[i]) - mean;
        ss += r * r;
    }
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    TestResult result{TestKind::kPairedT, 0.0, 1.0, static_cast<double>(n - 1)};
    // differences that agree up to rounding of the inputs count as constant
    if (sd <= 16.0 * std::numeric_limits<double>::epsilon() * scale) {
        if (std::abs(mean) <= 16.0 * std::numeric_limits<double>::epsilon() * scale) return result;
        throw DegenerateError("paired_t_test: differences are constant and nonzero (sd = 0)");
    }
    result.statistic = mean / (sd / std::sqrt(static_cast<double>(n)));
    result.p_value = student_t_two_sided(result.statistic, result.df);
    return result;
}

TestResult chi_squared_2x2(const Table2x2& table) {
    for (const auto& row : table)
        for (auto v : row)
            if (v < 0) throw InvalidArgument("chi_squared_2x2: counts must be >= 0");
    const std::int64_t a = table[0][0], b = table[0][1], c = table[1][0], d = table[1][1];
    const std::int64_t r1 = a + b, r2 = c + d, c1 = a + c, c2 = b + d;
    if (r1 == 0 || r2 == 0 || c1 == 0 || c2 == 0)
        throw DegenerateError("chi_squared_2x2: a row or column total is zero");
    const double n = static_cast<double>(r1 + r2);
    const double cross = static_cast<double>(a * d - b * c);
    const double stat = n * cross * cross /
                        (static_cast<double>(r1) * static_cast<double>(r2) *
                         static_cast<double>(c1) * static_cast<double>(c2));
    return {TestKind::kChiSquared, stat, chi_squared_upper(stat, 1.0), 1.0};
}

}  // namespace segqa::stats
