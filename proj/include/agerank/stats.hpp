#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace agerank::stats {

class StatsError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

// Continued fraction for I_x(a,b) (modified Lentz).
inline double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 10000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  throw std::runtime_error("incomplete beta: continued fraction did not converge");
}

}  // namespace detail

/// Regularized incomplete beta I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) throw StatsError("incomplete_beta: a and b must be > 0");
  if (!(x >= 0.0 && x <= 1.0)) throw StatsError("incomplete_beta: x must lie in [0,1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double lbt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double bt = std::exp(lbt);
  if (x < (a + 1.0) / (a + b + 2.0)) return bt * detail::betacf(a, b, x) / a;
  return 1.0 - bt * detail::betacf(b, a, 1.0 - x) / b;
}

/// Two-sided p-value of Student's t with `df` degrees of freedom.
inline double t_two_sided_p(double t, double df) {
  if (!(df > 0.0)) throw StatsError("t_two_sided_p: df must be > 0");
  if (std::isnan(t)) throw StatsError("t_two_sided_p: t is NaN");
  if (t == 0.0) return 1.0;
  if (std::isinf(t)) return 0.0;
  const double p = incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
  return std::clamp(p, 0.0, 1.0);
}

/// Student-t CDF P(T <= t).
inline double t_cdf(double t, double df) {
  const double tail = 0.5 * t_two_sided_p(t, df);
  return t >= 0.0 ? 1.0 - tail : tail;
}

inline double mean(const std::vector<double>& v) {
  if (v.empty()) throw StatsError("mean: empty input");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

/// Sample (n-1) standard deviation; 0 for a single value.
inline double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

struct MaeR2 {
  double mae = 0.0;
  double std_abs = 0.0;  // sample std of |error|
  double r2 = 0.0;
};

inline void check_pair(const std::vector<double>& a, const std::vector<double>& b, const char* op) {
  if (a.empty()) throw StatsError(std::string(op) + ": empty input");
  if (a.size() != b.size()) {
    throw StatsError(std::string(op) + ": length mismatch " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  }
}

inline MaeR2 mae_r2(const std::vector<double>& pred, const std::vector<double>& truth) {
  check_pair(pred, truth, "mae_r2");
  std::vector<double> abs_err(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) abs_err[i] = std::abs(pred[i] - truth[i]);
  const double ym = mean(truth);
  double ss_tot = 0.0, ss_res = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    ss_tot += (truth[i] - ym) * (truth[i] - ym);
    ss_res += (truth[i] - pred[i]) * (truth[i] - pred[i]);
  }
  if (ss_tot == 0.0) throw StatsError("mae_r2: R^2 undefined, truths have zero variance");
  return {mean(abs_err), sample_std(abs_err), 1.0 - ss_res / ss_tot};
}

struct TTest {
  double mean = 0.0;
  double std = 0.0;
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;
  bool degenerate = false;  // zero variance with nonzero mean
};

/// Two-sided one-sample t-test against zero.
inline TTest one_sample_ttest(const std::vector<double>& v) {
  if (v.size() < 2) throw StatsError("one_sample_ttest: need at least 2 values, got " + std::to_string(v.size()));
  TTest r;
  r.mean = mean(v);
  r.std = sample_std(v);
  r.df = static_cast<double>(v.size() - 1);
  if (r.std == 0.0) {
    if (r.mean == 0.0) return r;
    r.degenerate = true;
    r.t = r.mean > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    r.p = 0.0;
    return r;
  }
  r.t = r.mean / (r.std / std::sqrt(static_cast<double>(v.size())));
  r.p = t_two_sided_p(r.t, r.df);
  return r;
}

struct BagStats {
  std::vector<double> bag;
  TTest test;
};

/// BAG = prediction - truth, with the one-sample t-test against zero.
inline BagStats bag_stats(const std::vector<double>& pred, const std::vector<double>& truth) {
  check_pair(pred, truth, "bag_stats");
  BagStats s;
  for (std::size_t i = 0; i < pred.size(); ++i) s.bag.push_back(pred[i] - truth[i]);
  s.test = one_sample_ttest(s.bag);
  return s;
}

/// Paired test on |e_A| - |e_B| for signed errors e = prediction - truth.
inline TTest paired_abs_error_ttest(const std::vector<double>& err_a, const std::vector<double>& err_b) {
  check_pair(err_a, err_b, "paired_abs_error_ttest");
  std::vector<double> d(err_a.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = std::abs(err_a[i]) - std::abs(err_b[i]);
  return one_sample_ttest(d);
}

/// Two-sample paired t-test on a - b.
inline TTest paired_ttest(const std::vector<double>& a, const std::vector<double>& b) {
  check_pair(a, b, "paired_ttest");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = a[i] - b[i];
  return one_sample_ttest(d);
}

/// Average ranks (1-based), ties share the mean rank.
inline std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

enum class CorrelationKind { pearson, spearman };

struct Correlation {
  double r = 0.0;
  double p = 1.0;
  std::size_t n = 0;
};

inline Correlation pearson(const std::vector<double>& x, const std::vector<double>& y) {
  check_pair(x, y, "pearson");
  if (x.size() < 3) throw StatsError("correlation: need at least 3 pairs");
  const double mx = mean(x), my = mean(y);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw StatsError("correlation: zero variance input");
  Correlation c;
  c.n = x.size();
  c.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  const double df = static_cast<double>(x.size() - 2);
  if (std::abs(c.r) == 1.0) {
    c.p = 0.0;
  } else {
    c.p = t_two_sided_p(c.r * std::sqrt(df / (1.0 - c.r * c.r)), df);
  }
  return c;
}

inline Correlation spearman(const std::vector<double>& x, const std::vector<double>& y) {
  check_pair(x, y, "spearman");
  return pearson(ranks(x), ranks(y));
}

inline Correlation correlate(const std::vector<double>& x, const std::vector<double>& y, CorrelationKind kind) {
  return kind == CorrelationKind::pearson ? pearson(x, y) : spearman(x, y);
}

}  // namespace agerank::stats
