#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace nmadiag {

// Upper tail of chi^2 with integer df via the regularized incomplete gamma
// Q(df/2, x/2). Half-integer shapes admit the exact recurrence
//   Q(1/2, z) = erfc(sqrt(z)),  Q(1, z) = exp(-z),
//   Q(a+1, z) = Q(a, z) + z^a exp(-z) / Gamma(a+1).
inline double chi2_upper_tail(double x, int df) {
  if (df < 1) throw std::invalid_argument("chi2_upper_tail: df must be >= 1");
  if (x <= 0.0) return 1.0;
  const double z = 0.5 * x;
  double a, q;
  if (df % 2 == 1) {
    a = 0.5;
    q = std::erfc(std::sqrt(z));
  } else {
    a = 1.0;
    q = std::exp(-z);
  }
  // log-space term to survive large z without overflow in z^a
  while (2.0 * a < df) {
    q += std::exp(a * std::log(z) - z - std::lgamma(a + 1.0));
    a += 1.0;
  }
  return std::min(1.0, q);
}

// Empirical quantile with linear interpolation at rank 1 + (n-1)q.
inline double percentile(std::vector<double> samples, double q) {
  if (samples.empty()) throw std::invalid_argument("percentile: empty sample set");
  if (q < 0.0 || q > 1.0) throw std::invalid_argument("percentile: q outside [0,1]");
  std::sort(samples.begin(), samples.end());
  const auto n = samples.size();
  const double rank = (static_cast<double>(n) - 1.0) * q;
  const auto lo = static_cast<size_t>(std::floor(rank));
  const auto hi = std::min(lo + 1, n - 1);
  const double w = rank - static_cast<double>(lo);
  return (1.0 - w) * samples[lo] + w * samples[hi];
}

struct brent_result {
  double x = 0.0;
  double fx = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Brent's bounded 1-D minimizer (parabolic interpolation + golden section).
template <typename F>
brent_result brent_minimize(F&& f, double lo, double hi, double tol, int max_iter) {
  const double gold = 0.5 * (3.0 - std::sqrt(5.0));
  const double eps = std::sqrt(std::numeric_limits<double>::epsilon());
  double a = lo, b = hi;
  double x = a + gold * (b - a);
  double w = x, v = x;
  double fx = f(x), fw = fx, fv = fx;
  double d = 0.0, e = 0.0;
  brent_result res;
  for (int iter = 0; iter < max_iter; ++iter) {
    const double m = 0.5 * (a + b);
    const double tol1 = eps * std::abs(x) + tol;
    const double tol2 = 2.0 * tol1;
    if (std::abs(x - m) <= tol2 - 0.5 * (b - a)) {
      res.converged = true;
      res.iterations = iter;
      break;
    }
    double step;
    bool parabolic = false;
    if (std::abs(e) > tol1) {
      // trial parabola through x, v, w
      const double r = (x - w) * (fx - fv);
      double q = (x - v) * (fx - fw);
      double pnum = (x - v) * q - (x - w) * r;
      q = 2.0 * (q - r);
      if (q > 0.0) pnum = -pnum;
      q = std::abs(q);
      const double e_old = e;
      e = d;
      if (std::abs(pnum) < std::abs(0.5 * q * e_old) && pnum > q * (a - x) &&
          pnum < q * (b - x)) {
        d = pnum / q;
        const double u = x + d;
        if (u - a < tol2 || b - u < tol2) d = (x < m) ? tol1 : -tol1;
        parabolic = true;
      }
    }
    if (!parabolic) {
      e = (x < m) ? b - x : a - x;
      d = gold * e;
    }
    step = (std::abs(d) >= tol1) ? d : (d > 0.0 ? tol1 : -tol1);
    const double u = x + step;
    const double fu = f(u);
    if (fu <= fx) {
      if (u < x) b = x; else a = x;
      v = w; fv = fw;
      w = x; fw = fx;
      x = u; fx = fu;
    } else {
      if (u < x) a = u; else b = u;
      if (fu <= fw || w == x) {
        v = w; fv = fw;
        w = u; fw = fu;
      } else if (fu <= fv || v == x || v == w) {
        v = u; fv = fu;
      }
    }
    res.iterations = iter + 1;
  }
  res.x = x;
  res.fx = fx;
  return res;
}

// Maximize f on [lo, hi]; boundary values are probed so an estimate sitting on
// the boundary (notably tau^2 = 0) is returned exactly.
template <typename F>
brent_result brent_maximize(F&& f, double lo, double hi, double tol, int max_iter) {
  auto res = brent_minimize([&](double t) { return -f(t); }, lo, hi, tol, max_iter);
  res.fx = -res.fx;
  const double flo = f(lo);
  if (flo >= res.fx) {
    res.x = lo;
    res.fx = flo;
  } else {
    const double fhi = f(hi);
    if (fhi > res.fx) {
      res.x = hi;
      res.fx = fhi;
    }
  }
  return res;
}

}  // namespace nmadiag
