#include "batchcausal/stats.hpp"

#include <boost/math/special_functions/beta.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace batchcausal {

Summary summarize(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("summarize needs at least one value");
  Summary s;
  s.n = values.size();
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(s.n);
  if (s.n >= 2) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(s.n - 1));
  }
  return s;
}

double student_t_two_sided_p(double t, double df) {
  if (!(df > 0.0)) throw std::invalid_argument("t distribution needs df > 0");
  if (std::isinf(t)) return 0.0;
  if (t == 0.0) return 1.0;
  // P(|T| > |t|) = I_{df / (df + t^2)}(df / 2, 1 / 2)
  const double x = df / (df + t * t);
  return boost::math::ibeta(0.5 * df, 0.5, x);
}

WelchResult welch_t_test(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() < 2 || ys.size() < 2) throw std::invalid_argument("welch t-test needs >= 2 values per sample");
  const Summary a = summarize(xs);
  const Summary b = summarize(ys);
  const double va = *a.stddev * *a.stddev / static_cast<double>(a.n);
  const double vb = *b.stddev * *b.stddev / static_cast<double>(b.n);
  const double diff = a.mean - b.mean;
  WelchResult r;
  if (va + vb == 0.0) {
    r.degenerate = true;
    r.df = static_cast<double>(a.n + b.n - 2);
    if (diff == 0.0) {
      r.t = 0.0;
      r.p = 1.0;
    } else {
      r.t = std::copysign(std::numeric_limits<double>::infinity(), diff);
      r.p = 0.0;
    }
    return r;
  }
  r.t = diff / std::sqrt(va + vb);
  const double num = (va + vb) * (va + vb);
  const double den = va * va / static_cast<double>(a.n - 1) + vb * vb / static_cast<double>(b.n - 1);
  r.df = num / den;
  r.p = student_t_two_sided_p(r.t, r.df);
  return r;
}

std::string_view to_string(WilcoxonMethod method) {
  return method == WilcoxonMethod::exact ? "exact" : "normal";
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> differences) {
  std::vector<double> d;
  for (double v : differences) {
    if (!std::isfinite(v)) throw std::invalid_argument("wilcoxon differences must be finite");
    if (v != 0.0) d.push_back(v);
  }
  if (d.empty()) throw std::invalid_argument("wilcoxon signed-rank: all differences are zero");
  const std::size_t n = d.size();

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t i, std::size_t j) { return std::abs(d[i]) < std::abs(d[j]); });
  // Doubled average ranks stay integral under ties.
  std::vector<long long> rank2(n);
  double tie_term = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
    const auto doubled = static_cast<long long>(i + j + 2);  // (i+1) + (j+1)
    for (std::size_t k = i; k <= j; ++k) rank2[order[k]] = doubled;
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }

  long long w2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (d[i] > 0.0) w2 += rank2[i];
  }
  WilcoxonResult r;
  r.n = n;
  r.w_plus = static_cast<double>(w2) / 2.0;

  if (n <= kWilcoxonExactLimit) {
    r.method = WilcoxonMethod::exact;
    const long long max_sum = std::accumulate(rank2.begin(), rank2.end(), 0LL);
    // counts[s] = number of sign assignments whose doubled positive-rank sum is s.
    std::vector<double> counts(static_cast<std::size_t>(max_sum) + 1, 0.0);
    counts[0] = 1.0;
    long long reach = 0;
    for (long long r2 : rank2) {
      for (long long s = reach; s >= 0; --s) counts[static_cast<std::size_t>(s + r2)] += counts[static_cast<std::size_t>(s)];
      reach += r2;
    }
    const double total = std::ldexp(1.0, static_cast<int>(n));
    double lower = 0.0, upper = 0.0;
    for (long long s = 0; s <= max_sum; ++s) {
      if (s <= w2) lower += counts[static_cast<std::size_t>(s)];
      if (s >= w2) upper += counts[static_cast<std::size_t>(s)];
    }
    r.p = std::min(1.0, 2.0 * std::min(lower, upper) / total);
    return r;
  }

  r.method = WilcoxonMethod::normal;
  const double nn = static_cast<double>(n);
  const double mean = nn * (nn + 1.0) / 4.0;
  const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
  if (!(var > 0.0)) {
    r.p = 1.0;
    return r;
  }
  const double z = std::max(0.0, std::abs(r.w_plus - mean) - 0.5) / std::sqrt(var);
  r.p = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return r;
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw std::invalid_argument("wilcoxon pairs must have equal length");
  std::vector<double> d(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) d[i] = xs[i] - ys[i];
  return wilcoxon_signed_rank(d);
}

}  // namespace batchcausal
