#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>

namespace segqa::stats {

/// Convergence tolerance shared by the continued fractions and series below.
inline constexpr double kSpecialTolerance = 1e-12;

/// I_x(a, b), regularized incomplete beta; Lentz continued fraction.
double incomplete_beta(double a, double b, double x);
/// P(a, x), lower regularized incomplete gamma; series below a+1, else 1 - Q.
double gamma_p(double a, double x);
/// Q(a, x), upper regularized incomplete gamma; continued fraction above a+1.
double gamma_q(double a, double x);

/// Two-sided P(|T| >= |t|) for Student's t with `df` degrees of freedom.
double student_t_two_sided(double t, double df);
/// P(X >= x) for chi-squared with `df` degrees of freedom.
double chi_squared_upper(double x, double df);

enum class TestKind { kPairedT, kChiSquared };

std::string to_string(TestKind kind);

struct TestResult {
    TestKind kind = TestKind::kPairedT;
    double statistic = 0.0;
    double p_value = 1.0;
    double df = 1.0;
};

/// t = mean(d) / (sd(d)/sqrt(n)), sample sd, df = n - 1, two-sided p.
TestResult paired_t_test(std::span<const double> x, std::span<const double> y);

using Table2x2 = std::array<std::array<std::int64_t, 2>, 2>;

/// Pearson chi-squared without continuity correction, df = 1.
TestResult chi_squared_2x2(const Table2x2& table);

}  // namespace segqa::stats
