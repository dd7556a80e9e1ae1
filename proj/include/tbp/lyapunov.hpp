#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "tbp/errors.hpp"
#include "tbp/model.hpp"
#include "tbp/renewal.hpp"
#include "tbp/rng.hpp"
#include "tbp/stats.hpp"

namespace tbp {

struct LambdaValue {
  double value = 1.0;
  std::string method;  // "closed-form" | "grid-sup"
  bool certified = true;
};

// Lower edge of E_L: coordinates strictly above it are "large".
inline double large_threshold(const ModelSpec& m, int L) { return m.B_max * L - 2.0 * m.Delta() - m.delta(); }

// sup_{y > x} q(y).
inline double q_sup_above(const QFunction& q, double x) {
  if (q.kind == QFunction::Kind::Exp) return q(x);
  double s = q(x);
  for (std::size_t i = 0; i < q.ys.size(); ++i)
    if (q.ys[i] > x) s = std::max(s, q.qs[i]);
  return s;
}

struct GridBox {
  double lo = 0.0, hi = 0.0;
  int n = 2001;
};

// Per-coordinate sup of E[factor] on a grid; Lambda factorises across coordinates
// for both selector kinds, so the 2k-dimensional sup is the 2k-th power.
inline double capital_lambda_grid(const ModelSpec& m, double lambda, int L, const GridBox& box) {
  const double xs = large_threshold(m, L);
  const auto& h = m.lengthening;
  auto coord = [&](double r) {
    double f = r > xs ? h.laplace_neg(r, lambda) : 1.0;
    double p = h.prob_lengthen(r);
    return 1.0 - p + p * f;
  };
  double best = 1.0;
  for (int i = 0; i < box.n; ++i) best = std::max(best, coord(box.lo + (box.hi - box.lo) * i / (box.n - 1)));
  // the sup over r > x* may sit at the boundary itself
  if (xs >= box.lo && xs < box.hi) best = std::max(best, coord(std::nextafter(xs, kInf)));
  return std::pow(best, m.dim());
}

inline LambdaValue capital_lambda(const ModelSpec& m, double lambda, int L, const GridBox* box = nullptr) {
  if (!(lambda > 0)) throw ParameterError("capital_lambda: lambda must be > 0");
  if (L < 1) throw ParameterError("capital_lambda: L must be >= 1");
  const double xs = large_threshold(m, L);
  const auto& h = m.lengthening;
  const bool preset = m.params.preset != Preset::Custom;
  if (preset && h.selector == SelectorKind::All) {
    // factors decrease in r on the large region, sup approached at r -> x*+
    return {std::pow(h.laplace_neg(xs, lambda), m.dim()), "closed-form", true};
  }
  if (preset && h.selector == SelectorKind::Independent && h.width == WidthKind::Constant) {
    // (c_h - 1) sup q, formed in log space when c_h overflows
    const double z = lambda * h.Delta, q = q_sup_above(h.q, xs);
    double term = 0.0;
    if (q > 0) term = z < 600.0 ? (h.laplace_neg(0.0, lambda) - 1.0) * q : std::exp(z - std::log(z) + std::log(q));
    return {std::pow(1.0 + term, m.dim()), "closed-form", true};
  }
  if (!box) throw ParameterError("capital_lambda: custom models need a grid box");
  return {capital_lambda_grid(m, lambda, L, *box), "grid-sup", false};
}

// ---------------------------------------------------------------- Lyapunov function

struct LyapunovFunction {
  double lambda0 = 1.0;
  int L = 1;
  int k = 1;
  double B_max = 0.0, Delta = 0.0, delta = 0.0;
  double eps1 = 0.0;
  double V_min = 1.0;
  double C_V = 1.0;
  LambdaValue Lambda;

  // V = 1 on [0, flat_edge]^{2k}
  double flat_edge() const { return B_max * L - Delta - delta; }

  double log_value(const TelomereVector& x) const {
    double s = 0.0;
    const double e = flat_edge();
    for (double v : x) s += std::max(v - e, 0.0);
    return lambda0 * s;
  }
  double operator()(const TelomereVector& x) const { return std::exp(log_value(x)); }

  // sup over u in [-delta, Delta]^{2k} of V(x+u)/V(x); never above C_V.
  double local_ratio_bound(const TelomereVector& x) const {
    const double e = flat_edge();
    double s = 0.0;
    for (double v : x) s += std::max(v + Delta - e, 0.0) - std::max(v - e, 0.0);
    return std::min(std::exp(lambda0 * s), C_V);
  }
};

inline LyapunovFunction lyapunov_build(const ModelSpec& m, double lambda0, int L, const GridBox* box = nullptr) {
  if (!(m.B_max > m.Delta() + m.delta()))
    throw ValidationError("lyapunov_build: requires B_max > Delta + delta (B_max = " + std::to_string(m.B_max) + ")");
  LyapunovFunction V;
  V.lambda0 = lambda0;
  V.L = L;
  V.k = m.k;
  V.B_max = m.B_max;
  V.Delta = m.Delta();
  V.delta = m.delta();
  V.Lambda = capital_lambda(m, lambda0, L, box);
  V.eps1 = (1.0 + m.shortening.laplace(lambda0)) * V.Lambda.value - 1.0;
  V.V_min = 1.0;
  V.C_V = std::exp(2.0 * m.k * lambda0 * std::max(m.delta(), m.Delta()));
  return V;
}

struct LyapunovChoice {
  double lambda0 = 0.0;
  int L = 0;
  double lhs = 0.0, target = 0.0;
  bool found = false;
};

// Searches (lambda0, L) with (1 + L(g)(lambda0)) Lambda(lambda0, L) < target: lambda0 first makes
// L(g) small enough, then L grows until Lambda catches up.
inline LyapunovChoice search_lyapunov_parameters(const ModelSpec& m, double target, int L_max = 1 << 16) {
  LyapunovChoice c;
  c.target = target;
  if (!(target > 1)) return c;
  const double room = std::sqrt(target) - 1.0;
  double lambda0 = 1e-3 / m.delta();
  while (m.shortening.laplace(lambda0) >= room) {
    lambda0 *= 1.25;
    if (lambda0 > 1e6) return c;
  }
  for (int L = 1; L <= L_max; L = L < 8 ? L + 1 : L * 2) {
    double lhs = (1.0 + m.shortening.laplace(lambda0)) * capital_lambda(m, lambda0, L).value;
    if (lhs < target) {
      // refine downward between L/2 and L
      int lo = std::max(1, L / 2), hi = L;
      while (lo < hi) {
        int mid = (lo + hi) / 2;
        double v = (1.0 + m.shortening.laplace(lambda0)) * capital_lambda(m, lambda0, mid).value;
        if (v < target) hi = mid;
        else lo = mid + 1;
      }
      c.lambda0 = lambda0;
      c.L = hi;
      c.lhs = (1.0 + m.shortening.laplace(lambda0)) * capital_lambda(m, lambda0, hi).value;
      c.found = true;
      return c;
    }
  }
  return c;
}

// ---------------------------------------------------------------- (S2.2)

// Estimates are in units of V(x), so the bound is 1 + eps1 at every point.
struct S22Row {
  TelomereVector x;
  double log_V = 0.0;
  Estimate exit_mass;       // (i): 2 E[V(A) 1{alive, A outside the return box}] / V(x)
  double worst_given_I = 0; // (ii): max over I of estimate - bound, in units of SE margin
  std::vector<Estimate> given_I;
  bool pass_i = true, pass_ii = true;
};

struct S22Report {
  double eps1 = 0.0;
  double bound_factor = 0.0;  // 1 + eps1
  std::vector<S22Row> rows;
  bool pass_iii = true, pass_iv = true;
  bool pass() const {
    if (!pass_iii || !pass_iv) return false;
    for (const auto& r : rows)
      if (!r.pass_i || !r.pass_ii) return false;
    return true;
  }
};

inline std::vector<TelomereVector> default_S22_points(const ModelSpec& m, const LyapunovFunction& V, int n, Stream rng) {
  std::vector<TelomereVector> pts;
  const double edge = V.B_max * V.L;
  const int d = m.dim();
  pts.push_back(TelomereVector(d, 0.0));
  pts.push_back(TelomereVector(d, std::max(0.0, V.flat_edge() - m.Delta())));
  pts.push_back(TelomereVector(d, std::max(0.0, edge - 0.5 * m.Delta())));
  pts.push_back(TelomereVector(d, edge + m.Delta()));
  for (int i = 0; i < n; ++i) {
    TelomereVector x(d);
    for (auto& v : x) v = rng.uniform(0.0, edge + 2.0 * m.Delta());
    pts.push_back(std::move(x));
  }
  return pts;
}

inline S22Report check_S22(const ModelSpec& m, const LyapunovFunction& V, const std::vector<TelomereVector>& xs,
                           std::size_t n_samples, std::uint64_t seed, double eps1_override = -1.0,
                           unsigned threads = 0) {
  S22Report rep;
  rep.eps1 = eps1_override >= 0 ? eps1_override : V.eps1;
  rep.bound_factor = 1.0 + rep.eps1;
  const double box = V.B_max * V.L;
  const int d = m.dim();
  std::vector<ShorteningIndexSet> sets;
  if (m.k <= 6) sets = enumerate_shortening_sets(m.k);
  rep.rows.resize(xs.size());
  parallel_for(xs.size(), threads, [&](std::size_t p) {
    S22Row row;
    row.x = xs[p];
    row.log_V = V.log_value(row.x);
    Stream rng = Stream::from(seed, p, 0x522);
    RunningStats exit;
    for (std::size_t n = 0; n < n_samples; ++n) {
      auto out = sample_division(row.x, rng, m);
      double v = 0.0;
      if (out.daughterA.is_alive()) {
        const auto& y = out.daughterA.x;
        bool outside = std::any_of(y.begin(), y.end(), [&](double c) { return c > box; });
        if (outside) v = 2.0 * std::exp(V.log_value(y) - row.log_V);
      }
      exit.add(v);
    }
    row.exit_mass = exit.estimate();
    const double bound = rep.bound_factor;
    row.pass_i = row.exit_mass.mean <= bound + 3.0 * row.exit_mass.se;

    std::vector<ShorteningIndexSet> Is = sets;
    if (Is.empty()) {
      Stream r2 = rng.split(7);
      for (int i = 0; i < 16; ++i) Is.push_back(sample_shortening_set(m.k, r2));
    }
    const std::size_t per_I = std::max<std::size_t>(1, n_samples / Is.size());
    row.worst_given_I = -kInf;
    for (const auto& I : Is) {
      RunningStats s;
      for (std::size_t n = 0; n < per_I; ++n) {
        auto out = sample_division_given(row.x, I, rng, m);
        s.add(out.daughterA.is_alive() ? std::exp(V.log_value(out.daughterA.x) - row.log_V) : 0.0);
      }
      auto e = s.estimate();
      row.given_I.push_back(e);
      if (e.mean > bound + 3.0 * e.se) row.pass_ii = false;
      row.worst_given_I = std::max(row.worst_given_I, e.mean - bound);
    }
    rep.rows[p] = std::move(row);
  });
  // (iii) and (iv) on random pairs
  Stream rng = Stream::from(seed, 0, 0x544);
  for (int t = 0; t < 2000; ++t) {
    TelomereVector x(d), y(d);
    for (int j = 0; j < d; ++j) {
      x[j] = rng.uniform(0.0, box + 3.0 * m.Delta());
      y[j] = std::max(0.0, x[j] + rng.uniform(-1.0, 1.0) * std::max(m.delta(), m.Delta()));
    }
    if (V(x) < V.V_min) rep.pass_iii = false;
    if (std::exp(V.log_value(y) - V.log_value(x)) > V.C_V * (1 + 1e-12)) rep.pass_iv = false;
  }
  return rep;
}

// ---------------------------------------------------------------- (S2.1)

struct RenewalPoint {
  TelomereVector x;
  Estimate estimate;
  double margin = 0.0;  // estimate - 3 SE - target
  bool pass = false;
};

struct RenewalCertificate {
  int D = 1;
  double B_max = 0.0;
  double L_renew = 0.0;
  double target = 0.0;       // 1 + eps0
  double analytic_bound = 0.0;  // preset lower bound, 0 if none
  std::vector<RenewalPoint> points;
  bool pass() const {
    return !points.empty() && std::all_of(points.begin(), points.end(), [](const auto& p) { return p.pass; });
  }
};

namespace detail {

inline bool in_box(const TelomereVector& y, double hi) {
  return std::all_of(y.begin(), y.end(), [&](double v) { return v >= 0.0 && v <= hi; });
}

// Descendants at generation `left` that stayed in [0,B_max]^{2k} throughout and end in K_renew.
inline double restricted_count(const ModelSpec& m, const TelomereVector& x, int left, double B_max, double L_renew,
                               Stream& rng) {
  if (left == 0) return in_box(x, L_renew) ? 1.0 : 0.0;
  auto out = sample_division(x, rng, m);
  double c = 0.0;
  for (const CellState* d : {&out.daughterA, &out.daughterB})
    if (d->is_alive() && in_box(d->x, B_max)) c += restricted_count(m, d->x, left - 1, B_max, L_renew, rng);
  return c;
}

}  // namespace detail

inline std::vector<TelomereVector> default_renewal_points(const ModelSpec& m, double L_renew, int n, Stream rng) {
  std::vector<TelomereVector> pts;
  const int d = m.dim();
  pts.push_back(TelomereVector(d, 0.0));
  pts.push_back(TelomereVector(d, L_renew));
  for (int i = 2; i < n; ++i) {
    TelomereVector x(d);
    for (auto& v : x) v = rng.uniform(0.0, L_renew);
    pts.push_back(std::move(x));
  }
  return pts;
}

inline double preset_renewal_bound(const ModelSpec& m) {
  if (m.params.preset == Preset::Model1)
    return 4.0 * std::pow(1.0 - m.params.gamma, 2.0 * m.k) * model1_ratio_power(m.k, m.delta(), m.Delta());
  if (m.params.preset == Preset::Model2) return model2_ratio_power(m.k, m.delta(), m.Delta()) + 0.5;
  return 0.0;
}

inline RenewalCertificate verify_S21(const ModelSpec& m, int D, double L_renew, double B_max,
                                     const std::vector<TelomereVector>& xs, double target, std::size_t n,
                                     std::uint64_t seed, unsigned threads = 0) {
  if (!(L_renew <= B_max)) throw ParameterError("verify_S21: K_renew must lie inside [0,B_max]^{2k}");
  if (D < 1) throw ParameterError("verify_S21: D must be >= 1");
  RenewalCertificate c;
  c.D = D;
  c.B_max = B_max;
  c.L_renew = L_renew;
  c.target = target;
  c.analytic_bound = preset_renewal_bound(m);
  c.points.resize(xs.size());
  parallel_for(xs.size(), threads, [&](std::size_t p) {
    if (!detail::in_box(xs[p], L_renew)) throw ParameterError("verify_S21: sample point outside K_renew");
    Stream rng = Stream::from(seed, p, 0x521);
    RunningStats s;
    for (std::size_t i = 0; i < n; ++i) s.add(detail::restricted_count(m, xs[p], D, B_max, L_renew, rng));
    RenewalPoint r;
    r.x = xs[p];
    r.estimate = s.estimate();
    r.margin = r.estimate.mean - 3.0 * r.estimate.se - target;
    r.pass = r.margin >= 0.0;
    c.points[p] = std::move(r);
  });
  return c;
}

inline RenewalCertificate verify_S21(const ModelSpec& m, const std::vector<TelomereVector>& xs, std::size_t n,
                                     std::uint64_t seed, unsigned threads = 0) {
  return verify_S21(m, m.D, m.L_renew, m.B_max, xs, 1.0 + m.eps0, n, seed, threads);
}

// ---------------------------------------------------------------- corollaries

struct Criterion {
  std::string name;
  double value = 0.0, bound = 0.0;
  bool applicable = true;
  bool pass = false;
  std::string note;
};

struct CorollaryReport {
  std::vector<Criterion> criteria;
  std::vector<std::string> routes;  // certifying routes
  bool certified() const { return !routes.empty(); }
  const Criterion* find(const std::string& n) const {
    for (const auto& c : criteria)
      if (c.name == n) return &c;
    return nullptr;
  }
};

// Nonincreasing on a log grid past `from` and below tol * start at the far end.
inline bool decays_to_zero(const std::function<double(double)>& f, double from, double tol = 1e-6) {
  double start = f(from), prev = start;
  for (int i = 1; i <= 120; ++i) {
    double x = from * std::pow(10.0, i / 10.0) + i;
    double v = f(x);
    if (v > prev * (1 + 1e-12) + 1e-300) return false;
    prev = v;
  }
  return prev <= tol * std::max(start, 1e-300) || prev <= tol;
}

inline CorollaryReport check_corollaries(const ModelSpec& m, double lambda0, int L, double eps0, int D,
                                         double lambda_eps = 0.1) {
  CorollaryReport rep;
  const double target = std::pow(1.0 + eps0, 1.0 / D);
  const double Lg = m.shortening.laplace(lambda0);
  const double Lam = capital_lambda(m, lambda0, L).value;

  Criterion c52{"product_bound", (1.0 + Lg) * Lam, target, true, false, ""};
  c52.pass = c52.value < c52.bound;
  rep.criteria.push_back(c52);

  Criterion c53{"rate_bracket", (1.0 + Lg) * Lam, 0.0, false, false, ""};
  if (m.birth.kind == BirthRate::Kind::Constant) {
    double b1 = m.birth.coeffs[0], b2 = b1;
    c53.applicable = b1 > 0;
    c53.bound = b1 / b2 * (target - 1.0) + 1.0;
    c53.pass = c53.applicable && c53.value < c53.bound;
  } else {
    c53.note = "needs constant rate brackets b1 <= b <= b2";
  }
  rep.criteria.push_back(c53);

  Criterion p54{"lambda_bound", Lam, 1.0 + lambda_eps, true, Lam <= 1.0 + lambda_eps, ""};
  rep.criteria.push_back(p54);

  const auto& h = m.lengthening;
  Criterion p55{"width_decay", h.width_at(1e12), 0.0, true, false, "Delta_x -> 0"};
  p55.pass = decays_to_zero([&](double x) { return h.width_at(x); }, 1.0);
  rep.criteria.push_back(p55);

  Criterion p56{"q_decay", 0.0, 0.0, true, false, "sup p_{J,M} -> 0 for J meeting the large coordinates"};
  if (h.selector == SelectorKind::Independent) {
    p56.value = h.q(1e12);
    p56.pass = decays_to_zero([&](double x) { return h.q(x); }, std::max(1.0, m.B_max));
  } else {
    p56.value = 1.0;
  }
  rep.criteria.push_back(p56);

  if (c52.pass) rep.routes.push_back("product_bound");
  if (c53.pass) rep.routes.push_back("rate_bracket");
  if (p54.pass && p55.pass) rep.routes.push_back("lambda_bound+width_decay");
  if (p54.pass && p56.pass) rep.routes.push_back("lambda_bound+q_decay");
  return rep;
}

}  // namespace tbp
