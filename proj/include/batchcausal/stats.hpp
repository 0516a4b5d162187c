#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>

namespace batchcausal {

struct Summary {
  double mean = 0.0;
  std::optional<double> stddev;  // unbiased; absent for n = 1
  std::size_t n = 0;
};

// Throws std::invalid_argument for empty input.
Summary summarize(std::span<const double> values);

struct WelchResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;  // two-sided
  bool degenerate = false;  // both samples have zero variance
};

WelchResult welch_t_test(std::span<const double> xs, std::span<const double> ys);

// Two-sided p-value of a Student t statistic via the regularized incomplete beta.
double student_t_two_sided_p(double t, double df);

enum class WilcoxonMethod { exact, normal };
std::string_view to_string(WilcoxonMethod method);

struct WilcoxonResult {
  double w_plus = 0.0;  // sum of ranks of positive differences
  double p = 1.0;       // two-sided
  WilcoxonMethod method = WilcoxonMethod::exact;
  std::size_t n = 0;    // nonzero differences used
};

inline constexpr std::size_t kWilcoxonExactLimit = 20;

// Paired signed-rank test on differences. Zero differences are dropped, tied
// magnitudes share average ranks. Exact null distribution for n <= 20,
// otherwise normal approximation with tie and continuity corrections.
// Throws std::invalid_argument when every difference is zero.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> differences);
WilcoxonResult wilcoxon_signed_rank(std::span<const double> xs, std::span<const double> ys);

}  // namespace batchcausal
