#include "batchcausal/rng.hpp"
#include "batchcausal/stats.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

using namespace batchcausal;

namespace {

// Composite Simpson integration of the Student t density over [a, b].
double t_density_integral(double df, double a, double b, int panels) {
  const double norm = std::exp(std::lgamma((df + 1) / 2) - std::lgamma(df / 2)) / std::sqrt(df * std::numbers::pi);
  auto f = [&](double x) { return norm * std::pow(1 + x * x / df, -(df + 1) / 2); };
  const double h = (b - a) / panels;
  double s = f(a) + f(b);
  for (int i = 1; i < panels; ++i) s += f(a + i * h) * (i % 2 ? 4 : 2);
  return s * h / 3;
}

// Two-sided exact p by enumerating every sign assignment (distinct magnitudes).
double brute_force_wilcoxon(const std::vector<double>& diffs) {
  const std::size_t n = diffs.size();
  std::vector<double> mags;
  for (double d : diffs) mags.push_back(std::abs(d));
  std::vector<double> sorted = mags;
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n; ++i) ranks[i] = static_cast<double>(std::find(sorted.begin(), sorted.end(), mags[i]) - sorted.begin() + 1);
  double w_obs = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (diffs[i] > 0) w_obs += ranks[i];
  const double mean = n * (n + 1) / 4.0;
  const double dev = std::abs(w_obs - mean);
  std::size_t extreme = 0;
  for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
    double w = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask & (std::size_t{1} << i)) w += ranks[i];
    if (std::abs(w - mean) >= dev - 1e-9) ++extreme;
  }
  return static_cast<double>(extreme) / static_cast<double>(std::size_t{1} << n);
}

}  // namespace

TEST_CASE("summaries") {
  const std::vector<double> one{83.9};
  const auto s1 = summarize(one);
  CHECK(s1.mean == doctest::Approx(83.9));
  CHECK_FALSE(s1.stddev.has_value());
  const std::vector<double> two{1, 3};
  const auto s2 = summarize(two);
  CHECK(s2.mean == 2.0);
  CHECK(*s2.stddev == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
  CHECK_THROWS_AS(summarize(std::vector<double>{}), std::invalid_argument);

  Rng rng(5);
  std::vector<double> xs(100);
  for (double& x : xs) x = rng.uniform();
  double mean = 0;
  for (double x : xs) mean += x;
  mean /= 100;
  double ss = 0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  const auto s = summarize(xs);
  CHECK(std::abs(s.mean - mean) <= 1e-12);
  CHECK(std::abs(*s.stddev - std::sqrt(ss / 99)) <= 1e-12);
}

TEST_CASE("welch statistic, df and p") {
  const std::vector<double> a{1, 2, 3}, b{2, 4, 6};
  const auto same = welch_t_test(a, a);
  CHECK(same.t == 0.0);
  CHECK(same.p == doctest::Approx(1.0));

  const auto r = welch_t_test(b, a);
  CHECK(r.t == doctest::Approx(2.0 / std::sqrt(5.0 / 3.0)).epsilon(1e-12));
  CHECK(std::abs(r.t - 1.549) <= 0.001);
  // (4/3 + 1/3)^2 / ((4/3)^2/2 + (1/3)^2/2)
  CHECK(r.df == doctest::Approx((25.0 / 9.0) / (17.0 / 18.0)).epsilon(1e-12));
  const double tail = 0.5 - t_density_integral(r.df, 0.0, r.t, 20000);
  CHECK(std::abs(r.p - 2 * tail) <= 1e-6);

  const auto swapped = welch_t_test(a, b);
  CHECK(swapped.t == doctest::Approx(-r.t));
  CHECK(swapped.p == doctest::Approx(r.p).epsilon(1e-14));
}

TEST_CASE("student t p-value against quadrature") {
  for (double df : {1.0, 2.5, 7.0, 30.0})
    for (double t : {0.3, 1.0, 2.2, 4.0}) {
      const double tail = 0.5 - t_density_integral(df, 0.0, t, 20000);
      CHECK(std::abs(student_t_two_sided_p(t, df) - 2 * tail) <= 1e-6);
    }
}

TEST_CASE("degenerate and invalid welch inputs") {
  const std::vector<double> c1{5, 5, 5}, c2{3, 3}, one{1};
  const auto d = welch_t_test(c1, c2);
  CHECK(d.degenerate);
  CHECK(std::isinf(d.t));
  CHECK(d.t > 0);
  CHECK(d.p == 0.0);
  const auto e = welch_t_test(c1, c1);
  CHECK(e.degenerate);
  CHECK(e.p == 1.0);
  CHECK_THROWS_AS(welch_t_test(one, c1), std::invalid_argument);
}

TEST_CASE("exact signed-rank examples") {
  const std::vector<double> pos{1, 2, 3};
  const auto r = wilcoxon_signed_rank(pos);
  CHECK(r.w_plus == 6.0);
  CHECK(r.p == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(r.method == WilcoxonMethod::exact);

  const std::vector<double> mixed{1, -2, 3, -4, 5};
  CHECK(wilcoxon_signed_rank(mixed).p == doctest::Approx(brute_force_wilcoxon(mixed)).epsilon(1e-15));

  CHECK_THROWS_AS(wilcoxon_signed_rank(std::vector<double>{0, 0, 0}), std::invalid_argument);
  const std::vector<double> with_zero{0, 1, 2, 3};
  CHECK(wilcoxon_signed_rank(with_zero).n == 3);
}

TEST_CASE("signed-rank exact p against enumeration for random samples") {
  Rng rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 1 + rng.below(12);
    std::vector<double> diffs(n);
    for (double& d : diffs) d = rng.normal(0.3, 1.0);
    const auto r = wilcoxon_signed_rank(diffs);
    CHECK(r.p == doctest::Approx(brute_force_wilcoxon(diffs)).epsilon(1e-12));
    // multiple of 2^-n
    const double scaled = r.p * std::ldexp(1.0, static_cast<int>(n));
    CHECK(std::abs(scaled - std::round(scaled)) <= 1e-9);
    std::vector<double> neg = diffs;
    for (double& d : neg) d = -d;
    CHECK(wilcoxon_signed_rank(neg).p == doctest::Approx(r.p).epsilon(1e-14));
  }
}

TEST_CASE("paired form and normal branch") {
  const std::vector<double> xs{3, 5, 7}, ys{2, 3, 4};
  CHECK(wilcoxon_signed_rank(xs, ys).p == doctest::Approx(0.25));
  CHECK_THROWS_AS(wilcoxon_signed_rank(xs, std::vector<double>{1}), std::invalid_argument);

  std::vector<double> big;
  for (int i = 1; i <= 25; ++i) big.push_back(i % 3 == 0 ? -i : i);
  const auto r = wilcoxon_signed_rank(big);
  CHECK(r.method == WilcoxonMethod::normal);
  // W+ = 325 - 108 = 217; sigma^2 = n(n+1)(2n+1)/24
  CHECK(r.w_plus == 217.0);
  const double sigma = std::sqrt(25.0 * 26 * 51 / 24);
  const double z = (217.0 - 162.5 - 0.5) / sigma;
  CHECK(r.p == doctest::Approx(std::erfc(z / std::sqrt(2.0))).epsilon(1e-12));
}
