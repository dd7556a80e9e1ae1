#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/roots.hpp>

#include "tbp/errors.hpp"
#include "tbp/model.hpp"
#include "tbp/rng.hpp"

namespace tbp {

// Lifetime density f on the uniform grid t_i = i*dt, with its tail.
struct DensityOnGrid {
  double dt = 1e-3;
  std::vector<double> f;
  std::vector<double> tail;
  double mass_deficit = 0.0;

  std::size_t size() const { return f.size(); }
  double t_max() const { return dt * static_cast<double>(f.empty() ? 0 : f.size() - 1); }
  double t(std::size_t i) const { return dt * static_cast<double>(i); }
  std::size_t index_of(double t) const {
    if (t < -1e-12 || t > t_max() * (1 + 1e-12) + 1e-12)
      throw NumericError("density grid: t = " + std::to_string(t) + " outside [0, t_max]");
    return static_cast<std::size_t>(std::llround(t / dt));
  }
};

// Cumulative trapezoid integral, same grid.
inline std::vector<double> cumtrapz(const std::vector<double>& v, double dt) {
  std::vector<double> out(v.size(), 0.0);
  for (std::size_t i = 1; i < v.size(); ++i) out[i] = out[i - 1] + 0.5 * dt * (v[i - 1] + v[i]);
  return out;
}

// (a * b)(t_n) by the trapezoid rule.
inline std::vector<double> convolve(const std::vector<double>& a, const std::vector<double>& b, double dt) {
  const std::size_t n = std::min(a.size(), b.size());
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 1; i < n; ++i) {
    double s = 0.5 * (a[0] * b[i] + a[i] * b[0]);
    for (std::size_t j = 1; j < i; ++j) s += a[j] * b[i - j];
    out[i] = s * dt;
  }
  return out;
}

// Lifetime law given by its hazard rate s -> rate(s), with optional closed forms.
struct LifetimeLaw {
  enum class Kind { Exponential, AgeLinear, Rate };
  Kind kind = Kind::Rate;
  double c = 1.0;
  std::function<double(double)> rate;
  std::function<double(double)> cum;  // integrated hazard on [0,s]

  static LifetimeLaw exponential(double c) {
    if (!(c > 0)) throw ParameterError("exponential lifetime: rate must be > 0");
    return {Kind::Exponential, c, [c](double) { return c; }, [c](double s) { return c * s; }};
  }
  // hazard s -> s
  static LifetimeLaw age_linear() {
    return {Kind::AgeLinear, 1.0, [](double s) { return s; }, [](double s) { return 0.5 * s * s; }};
  }
  static LifetimeLaw from_rate(std::function<double(double)> r, std::function<double(double)> H = {}) {
    LifetimeLaw l{Kind::Rate, 1.0, std::move(r), std::move(H)};
    if (!l.cum) {
      auto rr = l.rate;
      l.cum = [rr](double s) {
        return s <= 0 ? 0.0 : boost::math::quadrature::gauss_kronrod<double, 31>::integrate(rr, 0.0, s, 15, 1e-13);
      };
    }
    return l;
  }
  // Lifetime of a cell born at age a0 (a0 = 0 for newborns) under a polynomial birth rate.
  static LifetimeLaw from_birth(const BirthRate& b, double a0 = 0.0) {
    if (b.depends_on_x()) throw ParameterError("lifetime: birth rate depends on x; supply brackets instead");
    if (b.kind == BirthRate::Kind::Constant && a0 == 0.0) return exponential(b.coeffs[0]);
    if (b.kind == BirthRate::Kind::AgeLinear && a0 == 0.0 && b.coeffs[0] == 0.0 && b.coeffs[1] == 1.0)
      return age_linear();
    return from_rate([b, a0](double s) { return b.eval_poly(a0 + s); },
                     [b, a0](double s) { return b.cumulative({}, a0, s); });
  }

  double tail(double s) const { return std::exp(-cum(s)); }
  double pdf(double s) const { return rate(s) * tail(s); }

  // Smallest power-of-two horizon with tail below eps.
  double horizon(double eps = 1e-7) const {
    double t = 1.0;
    while (tail(t) > eps) {
      t *= 2.0;
      if (t > 1e9) throw NumericError("lifetime: integrated hazard does not diverge");
    }
    return t;
  }

  DensityOnGrid render(double dt, double t_max) const {
    if (!(dt > 0) || !(t_max > 0)) throw ParameterError("render: dt and t_max must be > 0");
    const auto n = static_cast<std::size_t>(std::llround(t_max / dt)) + 1;
    DensityOnGrid g;
    g.dt = dt;
    g.f.resize(n);
    g.tail.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      double s = dt * static_cast<double>(i);
      g.tail[i] = tail(s);
      g.f[i] = rate(s) * g.tail[i];
    }
    auto c = cumtrapz(g.f, dt);
    g.mass_deficit = 1.0 - c.back();
    return g;
  }
};

inline double laplace(const DensityOnGrid& g, double p) {
  if (g.f.empty()) throw ParameterError("laplace: empty grid");
  if (p < 0 && std::exp(-p * g.t_max()) * g.tail.back() > 1e-6)
    throw NumericError("laplace: integral diverges or is truncated at p = " + std::to_string(p));
  double s = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    double w = (i == 0 || i + 1 == g.size()) ? 0.5 : 1.0;
    s += w * std::exp(-p * g.t(i)) * g.f[i];
  }
  return s * g.dt;
}

inline double laplace(const LifetimeLaw& l, double p) {
  switch (l.kind) {
    case LifetimeLaw::Kind::Exponential:
      if (p <= -l.c) throw NumericError("laplace: exponential transform diverges");
      return l.c / (l.c + p);
    case LifetimeLaw::Kind::AgeLinear: {
      // 1 - p sqrt(pi/2) e^{p^2/2} erfc(p/sqrt 2); the product is formed in log space for large p
      if (p == 0.0) return 1.0;
      if (p > 20.0) {
        double a = p / std::sqrt(2.0);
        double tail = std::exp(a * a + std::log(std::erfc(a)));
        return 1.0 - p * std::sqrt(M_PI / 2.0) * tail;
      }
      return 1.0 - p * std::sqrt(M_PI / 2.0) * std::exp(p * p / 2.0) * std::erfc(p / std::sqrt(2.0));
    }
    default: {
      double T = l.horizon(1e-16);
      if (p < 0 && std::exp(-p * T) * l.tail(T) > 1e-12) throw NumericError("laplace: integral diverges");
      return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
          [&](double s) { return std::exp(-p * s) * l.pdf(s); }, 0.0, T, 20, 1e-13);
    }
  }
}

// alpha > 0 with L(f)(alpha) = 1/gamma.
inline double malthusian_root(const LifetimeLaw& l, double gamma) {
  if (!(gamma > 1)) throw ParameterError("malthusian_root: mean offspring must exceed 1");
  const double target = 1.0 / gamma;
  auto fn = [&](double p) { return laplace(l, p) - target; };
  double hi = 1.0;
  while (fn(hi) > 0) {
    hi *= 2.0;
    if (hi > 1e8) throw NumericError("malthusian_root: no sign change within bracket expansion");
  }
  auto tol = [](double a, double b) { return std::abs(b - a) <= 4e-16 * std::max(1.0, std::abs(a)); };
  auto r = boost::math::tools::bisect(fn, 0.0, hi, tol);
  double alpha = 0.5 * (r.first + r.second);
  if (std::abs(fn(alpha)) > 1e-10) throw NumericError("malthusian_root: residual above 1e-10");
  return alpha;
}

// m = Fbar + gamma f*m, trapezoid convolution, implicit in the diagonal term.
inline std::vector<double> bh_mean(const DensityOnGrid& g, double gamma) {
  const std::size_t n = g.size();
  std::vector<double> m(n, 0.0);
  const double dt = g.dt;
  const double diag = 1.0 - gamma * dt * 0.5 * g.f[0];
  if (!(diag > 0)) throw NumericError("bh_mean: grid step too coarse for the density at 0");
  m[0] = g.tail[0];  // empty convolution at t = 0
  for (std::size_t i = 1; i < n; ++i) {
    double s = 0.5 * g.f[i] * m[0];
    for (std::size_t j = 1; j < i; ++j) s += g.f[j] * m[i - j];
    m[i] = (g.tail[i] + gamma * dt * s) / diag;
  }
  return m;
}

inline std::vector<double> bh_mean(const LifetimeLaw& l, double gamma, double dt, double t_end) {
  return bh_mean(l.render(dt, t_end), gamma);
}

// Truncated series sum_n gamma^n (f*^(n) * Fbar), with the same discrete convolution as bh_mean.
inline std::vector<double> bh_mean_series(const DensityOnGrid& g, double gamma, double tol = 1e-12, int max_terms = 400) {
  const double dt = g.dt;
  const double diag = 1.0 - gamma * dt * 0.5 * g.f[0];
  // term_{n+1} = gamma (f * term_n) computed with the implicit diagonal folded in, so that
  // the partial sums converge to the discrete solution of bh_mean.
  std::vector<double> term(g.tail.size());
  for (std::size_t i = 0; i < term.size(); ++i) term[i] = i == 0 ? g.tail[0] : g.tail[i] / diag;
  std::vector<double> sum = term;
  for (int n = 1; n < max_terms; ++n) {
    std::vector<double> next(term.size(), 0.0);
    for (std::size_t i = 1; i < term.size(); ++i) {
      double s = 0.5 * g.f[i] * term[0];
      for (std::size_t j = 1; j < i; ++j) s += g.f[j] * term[i - j];
      next[i] = gamma * dt * s / diag;
    }
    double mx = 0.0;
    for (std::size_t i = 0; i < next.size(); ++i) {
      sum[i] += next[i];
      mx = std::max(mx, std::abs(next[i]));
    }
    term.swap(next);
    if (mx < tol) return sum;
  }
  throw NumericError("bh_mean_series: truncation not converged");
}

// f*^(n), n >= 1.
inline DensityOnGrid convolution_power(const DensityOnGrid& g, int n) {
  if (n < 1 || n > 10) throw ParameterError("convolution_power: n must lie in [1,10]");
  DensityOnGrid out = g;
  for (int r = 1; r < n; ++r) out.f = convolve(out.f, g.f, g.dt);
  if (n > 1) {
    auto c = cumtrapz(out.f, g.dt);
    for (std::size_t i = 0; i < c.size(); ++i) out.tail[i] = 1.0 - c[i];
    out.mass_deficit = 1.0 - c.back();
  }
  return out;
}

// |sum_{r<n} (f*^(r) * Fbar)(t) - int_t^inf f*^(n)|.
inline double identity_check(const DensityOnGrid& g, int n, double t) {
  const std::size_t i = g.index_of(t);
  double lhs = g.tail[i];
  std::vector<double> fr = g.f;
  for (int r = 1; r < n; ++r) {
    lhs += convolve(fr, g.tail, g.dt)[i];
    if (r + 1 < n) fr = convolve(fr, g.f, g.dt);
  }
  double rhs = convolution_power(g, n).tail[i];
  return std::abs(lhs - rhs);
}

inline double identity_check_max(const DensityOnGrid& g, int n, double t_end) {
  const std::size_t last = g.index_of(t_end);
  std::vector<double> lhs(g.tail.begin(), g.tail.begin() + static_cast<long>(last) + 1);
  std::vector<double> fr = g.f;
  for (int r = 1; r < n; ++r) {
    auto c = convolve(fr, g.tail, g.dt);
    for (std::size_t i = 0; i <= last; ++i) lhs[i] += c[i];
    if (r + 1 < n) fr = convolve(fr, g.f, g.dt);
  }
  auto rhs = convolution_power(g, n).tail;
  double worst = 0.0;
  for (std::size_t i = 0; i <= last; ++i) worst = std::max(worst, std::abs(lhs[i] - rhs[i]));
  return worst;
}

// ---------------------------------------------------------------- coupling

struct CoupledTimes {
  std::vector<double> times1, times2;
  std::vector<TelomereVector> traits;
};

// Waiting time s with int_a^{a+s} b(x,u) du = e.
inline double invert_hazard(const BirthRate& b, const TelomereVector& x, double a, double e) {
  if (auto s = b.invert_closed_form(a, e); s && b.kind != BirthRate::Kind::Custom) {
    if (!std::isfinite(*s)) throw NumericError("coupling: hazard does not diverge");
    return *s;
  }
  double hi = 1.0;
  while (b.cumulative(x, a, hi) < e) {
    hi *= 2.0;
    if (hi > 1e9) throw NumericError("coupling: hazard does not diverge");
  }
  auto fn = [&](double s) { return b.cumulative(x, a, s) - e; };
  auto tol = [](double l, double h) { return std::abs(h - l) <= 1e-14 * std::max(1.0, l); };
  auto r = boost::math::tools::bisect(fn, 0.0, hi, tol);
  return r.second;
}

using TraitKernel = std::function<TelomereVector(const TelomereVector&, Stream&)>;

// Both sequences are driven by the same exponential marks E_n and the same trait path W_n.
inline CoupledTimes coupled_jump_times(const BirthRate& b1, const BirthRate& b2, const TraitKernel& kernel,
                                       TelomereVector x0, int n_jumps, Stream rng) {
  CoupledTimes out;
  out.traits.push_back(std::move(x0));
  double t1 = 0.0, t2 = 0.0;
  for (int n = 0; n < n_jumps; ++n) {
    const TelomereVector& w = out.traits.back();
    for (double a : {0.0, 0.5, 2.0})
      if (b1(w, a) > b2(w, a) * (1 + 1e-12)) throw ParameterError("coupling: b1 <= b2 violated on the trait path");
    double e = -std::log(rng.uniform_pos());
    t1 += invert_hazard(b1, w, 0.0, e);
    t2 += invert_hazard(b2, w, 0.0, e);
    out.times1.push_back(t1);
    out.times2.push_back(t2);
    out.traits.push_back(kernel ? kernel(w, rng) : w);
  }
  return out;
}

// ---------------------------------------------------------------- alpha / beta

inline LifetimeLaw lower_lifetime(const ModelSpec& m, double a0 = 0.0) {
  auto lo = m.birth.lower_rate();
  if (!lo) throw ParameterError("solve_alpha: model supplies no lower bracket b_");
  if (!m.birth.lower && !m.birth.depends_on_x()) return LifetimeLaw::from_birth(m.birth, a0);
  return LifetimeLaw::from_rate([lo, a0](double s) { return lo(a0 + s); });
}

inline LifetimeLaw upper_lifetime(const ModelSpec& m) {
  auto up = m.birth.upper_rate();
  if (!up) throw ParameterError("solve_beta: model supplies no upper bracket b^");
  if (!m.birth.upper && !m.birth.depends_on_x()) return LifetimeLaw::from_birth(m.birth, 0.0);
  return LifetimeLaw::from_rate(up);
}

inline double solve_alpha(const ModelSpec& m, double eps0, int D) {
  return malthusian_root(lower_lifetime(m), std::pow(1.0 + eps0, 1.0 / D));
}

inline double solve_beta(const ModelSpec& m, double eps1) { return malthusian_root(upper_lifetime(m), 1.0 + eps1); }

struct OrderReport {
  double alpha = 0.0, beta = 0.0;
  bool beta_below_alpha = false;
  double t_used = 0.0;
  double inf_integral = 0.0;     // inf over the age grid of int_0^t e^{-alpha s} F_a(s) ds
  double analytic_bound = 0.0;   // e^{-alpha a0} - e^{-alpha t} - alpha/(alpha+b0) e^{-alpha a0}
  double a_max = 0.0;
  bool second_condition = false;
  bool pass() const { return beta_below_alpha && second_condition; }
};

inline OrderReport check_order(const ModelSpec& m, double alpha, double beta, double a_max = 50.0, int n_ages = 101) {
  OrderReport r;
  r.alpha = alpha;
  r.beta = beta;
  r.a_max = a_max;
  r.beta_below_alpha = beta > 0 && beta < alpha;
  const double a0 = m.birth.a0, b0 = m.birth.b0;
  if (alpha > 0 && b0 > 0) {
    double tmin = a0 + std::log((alpha + b0) / b0) / alpha;
    r.t_used = 2.0 * tmin;
    r.analytic_bound = std::exp(-alpha * a0) - std::exp(-alpha * r.t_used) - alpha / (alpha + b0) * std::exp(-alpha * a0);
  } else {
    r.t_used = 10.0;
  }
  auto lo = m.birth.lower_rate();
  double inf = kInf;
  for (int i = 0; i < n_ages && lo; ++i) {
    double a = a_max * i / std::max(1, n_ages - 1);
    auto law = !m.birth.lower && !m.birth.depends_on_x() ? LifetimeLaw::from_birth(m.birth, a)
                                                          : LifetimeLaw::from_rate([lo, a](double s) { return lo(a + s); });
    double v = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
        [&](double s) { return std::exp(-alpha * s) * law.pdf(s); }, 0.0, r.t_used, 15, 1e-12);
    inf = std::min(inf, v);
  }
  r.inf_integral = lo ? inf : 0.0;
  r.second_condition = r.inf_integral > 0.0;
  return r;
}

}  // namespace tbp
