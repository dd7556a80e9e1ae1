#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "tbp/errors.hpp"
#include "tbp/lyapunov.hpp"
#include "tbp/model.hpp"
#include "tbp/population.hpp"
#include "tbp/rng.hpp"
#include "tbp/stats.hpp"

namespace tbp {

struct PsiWeight {
  int d_psi = 1;
  LyapunovFunction V;
  double lambda_psi = 1.0;

  double age_factor(double a) const { return 1.0 + std::pow(a, d_psi); }
  double operator()(const TelomereVector& x, double a) const { return age_factor(a) * V(x); }
  // d/da log psi
  double dlog(double a) const {
    if (d_psi == 0) return 0.0;
    if (d_psi == 1) return 1.0 / (1.0 + a);
    return d_psi * std::pow(a, d_psi - 1) / (1.0 + std::pow(a, d_psi));
  }
};

struct LambdaPsi {
  double value = 0.0;
  double C_psi = 0.0, C_prime = 0.0;
  double analytic = 0.0;  // max of the two lower bounds, before the margin
  double c_lambda = -1.0; // jump-count contraction constant, when requested
};

// sup over a log grid in [0, 1e6] (plus a = 0).
inline double sup_on_age_grid(const std::function<double(double)>& f) {
  double s = f(0.0);
  for (int i = 0; i <= 6000; ++i) s = std::max(s, f(std::pow(10.0, -6.0 + 12.0 * i / 6000.0)));
  return s;
}

// c_lambda = 2 b~ (1+eps1) int_0^inf (1 + (A+s)^{d_b}) e^{-lambda s} ds, in closed form.
inline double jump_count_constant(double b_tilde, double eps1, int d_b, double A, double lambda) {
  double integral = 1.0 / lambda;
  double binom = 1.0, fact = 1.0;
  for (int j = 0; j <= d_b; ++j) {
    if (j > 0) {
      binom *= static_cast<double>(d_b - j + 1) / j;
      fact *= j;
    }
    integral += binom * std::pow(A, d_b - j) * fact / std::pow(lambda, j + 1);
  }
  return 2.0 * b_tilde * (1.0 + eps1) * integral;
}

inline LambdaPsi compute_lambda_psi(const ModelSpec& m, const LyapunovFunction& V, int d_psi, double safety_margin,
                                    double jump_count_A = -1.0) {
  if (d_psi < m.birth.d_b) throw ParameterError("compute_lambda_psi: d_psi must be >= d_b");
  if (!(safety_margin >= 0)) throw ParameterError("compute_lambda_psi: safety margin must be >= 0");
  PsiWeight w{d_psi, V, 0.0};
  LambdaPsi r;
  r.C_psi = sup_on_age_grid([&](double a) { return w.dlog(a); });
  r.C_prime = sup_on_age_grid([&](double a) { return (1.0 + std::pow(a, m.birth.d_b)) / w.age_factor(a); });
  const double bt = m.birth.b_tilde;
  r.analytic = std::max(r.C_psi + 2.0 * bt * r.C_prime * (1.0 + V.eps1), r.C_psi + 2.0 * bt * r.C_prime / V.V_min);
  r.value = r.analytic * (1.0 + safety_margin);
  if (r.value <= r.analytic) r.value = std::nextafter(r.analytic, kInf);
  if (jump_count_A >= 0) {
    r.c_lambda = jump_count_constant(bt, V.eps1, m.birth.d_b, jump_count_A, r.value);
    while (r.c_lambda >= 1.0) {
      r.value *= 1.1;
      r.c_lambda = jump_count_constant(bt, V.eps1, m.birth.d_b, jump_count_A, r.value);
    }
  }
  return r;
}

inline double jump_rate(const ModelSpec& m, const PsiWeight& psi, const TelomereVector& x, double a) {
  double r = psi.lambda_psi + m.birth(x, a) - psi.dlog(a);
  if (!(r > 0)) throw NumericError("jump_rate: nonpositive rate " + std::to_string(r) + " (lambda_psi too small)");
  return r;
}

// ---------------------------------------------------------------- jump types

struct JumpLabel {
  CoordMask I = 0, J = 0;
  bool cemetery = false;
  auto operator<=>(const JumpLabel&) const = default;
};

struct JumpTypeProbs {
  struct Entry {
    JumpLabel label;
    double q = 0.0, se = 0.0;
  };
  std::vector<Entry> entries;
  double cemetery = 0.0;
  double total = 0.0;  // sum of entries + cemetery
};

inline JumpTypeProbs jump_type_probs(const ModelSpec& m, const PsiWeight& psi, const TelomereVector& x, double a,
                                     std::size_t n, Stream rng) {
  const double rate = jump_rate(m, psi, x, a);
  // V enters only through V(A)/V(x), formed in log space
  const double scale = 2.0 * m.birth(x, a) / (psi.age_factor(a) * rate);
  const double log_Vx = psi.V.log_value(x);
  std::map<JumpLabel, std::pair<double, double>> acc;  // sum, sum of squares of V(A)/V(x) 1{label}
  for (std::size_t i = 0; i < n; ++i) {
    auto d = sample_division(x, rng, m);
    if (!d.daughterA.is_alive()) continue;
    double v = std::exp(psi.V.log_value(d.daughterA.x) - log_Vx);
    auto& s = acc[{d.I.coords(), d.J, false}];
    s.first += v;
    s.second += v * v;
  }
  JumpTypeProbs out;
  double sum = 0.0;
  const double nn = static_cast<double>(n);
  for (const auto& [label, s] : acc) {
    double mean = s.first / nn;
    double var = std::max(0.0, s.second / nn - mean * mean);
    double q = scale * mean;
    if (q < 0 || q > 1 + 1e-9) throw NumericError("jump_type_probs: q outside [0,1] (lambda_psi too small)");
    out.entries.push_back({label, q, scale * std::sqrt(var / nn)});
    sum += q;
  }
  if (sum > 1 + 1e-9) throw NumericError("jump_type_probs: total jump mass exceeds 1 (lambda_psi too small)");
  out.cemetery = std::max(0.0, 1.0 - sum);
  out.total = sum + out.cemetery;
  return out;
}

// ---------------------------------------------------------------- paths

struct ParticlePath {
  std::vector<double> T;             // T[0] = 0
  std::vector<TelomereVector> X;
  std::vector<double> A;             // A[0] = initial age, 0 afterwards
  std::vector<JumpLabel> labels;     // labels[n] for the jump at T[n], n >= 1; labels[0] unused
  bool absorbed = false;
  double tau = kInf;
  double T_all = kInf;
  double horizon = 0.0;
  std::size_t clipped = 0;           // jump decisions where the mass estimate exceeded 1

  std::size_t jumps() const { return T.size() - 1; }
  // (X, age) at the horizon, valid when not absorbed
  double final_age() const { return A.back() + (horizon - T.back()); }
};

struct ParticleOptions {
  std::size_t n_q = 64;                 // samples for the jump-mass estimate when no exact decision exists
  std::size_t rejection_guard = 1000000;
};

namespace detail {

// Time until the next event of the clock with hazard lambda_psi - dlog(a+s), by thinning against lambda_psi.
inline double psi_clock(const PsiWeight& psi, double a, Stream& rng) {
  double s = 0.0;
  for (int it = 0; it < 10000000; ++it) {
    s += rng.exponential(psi.lambda_psi);
    if (rng.uniform() * psi.lambda_psi < psi.lambda_psi - psi.dlog(a + s)) return s;
  }
  throw NumericError("particle: thinning guard exceeded");
}

}  // namespace detail

inline ParticlePath simulate_particle(const ModelSpec& m, const PsiWeight& psi, const TelomereVector& x0, double a0,
                                      double horizon, Stream rng, const ParticleOptions& opt = {}) {
  if (!valid_trait(x0) || static_cast<int>(x0.size()) != m.dim()) throw ParameterError("simulate_particle: invalid initial trait");
  ParticlePath p;
  p.horizon = horizon;
  p.T.push_back(0.0);
  p.X.push_back(x0);
  p.A.push_back(a0);
  p.labels.push_back({});
  const CoordMask full = full_mask(m.dim());
  CoordMask covered = 0;
  double t = 0.0, a = a0;
  TelomereVector x = x0;
  while (true) {
    double tb = sample_division_time(x, a, rng, m);
    double tp = detail::psi_clock(psi, a, rng);
    double tau = std::min(tb, tp);
    if (t + tau > horizon) break;
    t += tau;
    const double ae = a + tau;
    const double rate = jump_rate(m, psi, x, ae);
    const double b = m.birth(x, ae);
    const double log_Vx = psi.V.log_value(x);
    const double local = psi.V.local_ratio_bound(x);
    auto ratio = [&](const TelomereVector& y) { return std::exp(psi.V.log_value(y) - log_Vx); };
    const double scale = 2.0 * b / (psi.age_factor(ae) * rate);  // jump mass = scale * E[V(A)/V(x) 1{alive}]
    bool jumped = false;
    DivisionOutcome d;
    if (scale * local <= 1.0) {
      d = sample_division(x, rng, m);
      jumped = d.daughterA.is_alive() && rng.uniform() < scale * ratio(d.daughterA.x);
    } else {
      double sum = 0.0;
      for (std::size_t i = 0; i < opt.n_q; ++i) {
        auto e = sample_division(x, rng, m);
        if (e.daughterA.is_alive()) sum += ratio(e.daughterA.x);
      }
      double qhat = scale * sum / static_cast<double>(opt.n_q);
      if (qhat > 1.0) ++p.clipped;
      if (rng.uniform() < qhat) {
        for (std::size_t it = 0;; ++it) {
          if (it >= opt.rejection_guard)
            throw NumericError("simulate_particle: rejection guard exceeded at t = " + std::to_string(t));
          d = sample_division(x, rng, m);
          if (d.daughterA.is_alive() && rng.uniform() * local < ratio(d.daughterA.x)) break;
        }
        jumped = true;
      }
    }
    if (!jumped) {
      p.absorbed = true;
      p.tau = t;
      p.T.push_back(t);
      p.labels.push_back({0, 0, true});
      p.X.push_back({});
      p.A.push_back(0.0);
      break;
    }
    x = d.daughterA.x;
    a = 0.0;
    p.T.push_back(t);
    p.X.push_back(x);
    p.A.push_back(0.0);
    p.labels.push_back({d.I.coords(), d.J, false});
    covered |= d.I.coords() | d.J;
    if (covered == full && !std::isfinite(p.T_all)) p.T_all = t;
  }
  return p;
}

// ---------------------------------------------------------------- cross validation

struct CrossValidation {
  Estimate lhs, rhs;
  double z = 0.0;
  double psi0 = 0.0;
  std::size_t clipped = 0;
  bool pass(double zmax = 3.0) const { return z < zmax; }
};

inline CrossValidation cross_validate_semigroup(const ModelSpec& m, const PsiWeight& psi, const TelomereVector& x0,
                                                double a0, const TestFunction& f, double t, std::size_t n,
                                                std::uint64_t seed, unsigned threads = 0,
                                                std::size_t n_population = 0) {
  CrossValidation cv;
  cv.psi0 = psi(x0, a0);
  std::vector<double> vals(n, 0.0);
  std::vector<std::size_t> clips(n, 0);
  parallel_for(n, threads, [&](std::size_t i) {
    auto path = simulate_particle(m, psi, x0, a0, t, Stream::from(seed, i, 0xA11));
    clips[i] = path.clipped;
    if (!path.absorbed) vals[i] = f(path.X.back(), path.final_age());
  });
  cv.lhs = summarize(vals);
  for (auto c : clips) cv.clipped += c;
  const double w = std::exp(-psi.lambda_psi * t) / cv.psi0;
  auto Mt = estimate_M_t(m, CellState::alive(x0, a0), [&](const TelomereVector& x, double a) { return f(x, a) * psi(x, a); },
                         t, n_population ? n_population : n, hash_combine(seed, 0xB4A), 1000000, threads);
  cv.rhs = {w * Mt.mean, w * Mt.se, Mt.n_valid};
  cv.z = z_score(cv.lhs, cv.rhs);
  return cv;
}

// ---------------------------------------------------------------- one-jump law

struct BoxEvent {
  std::vector<double> lo, hi;  // X_1 in [lo,hi]
  std::optional<JumpLabel> label;
  double c0 = 0.0, c1 = 0.0;   // T_1 in [c0,c1]
  bool contains(const TelomereVector& y) const {
    for (std::size_t j = 0; j < y.size(); ++j)
      if (y[j] < lo[j] || y[j] > hi[j]) return false;
    return true;
  }
};

struct OneJumpReport {
  Estimate mc, oracle;
  double z = 0.0;
};

// No-jump survival of the particle started at (y, 0) over [0, r].
inline double particle_survival(const ModelSpec& m, const PsiWeight& psi, const TelomereVector& y, double r) {
  return std::exp(-m.birth.cumulative(y, 0.0, r) - psi.lambda_psi * r) * psi.age_factor(r) / psi.age_factor(0.0);
}

inline OneJumpReport one_jump_law_check(const ModelSpec& m, const PsiWeight& psi, const TelomereVector& x0, double a0,
                                        double t, const BoxEvent& ev, std::size_t n, std::uint64_t seed,
                                        unsigned threads = 0) {
  OneJumpReport rep;
  const double c0 = std::max(0.0, ev.c0), c1 = std::min(t, ev.c1);
  std::vector<double> hits(n, 0.0);
  parallel_for(n, threads, [&](std::size_t i) {
    auto p = simulate_particle(m, psi, x0, a0, t, Stream::from(seed, i, 0x1A));
    if (p.absorbed || p.jumps() != 1) return;
    if (p.T[1] < c0 || p.T[1] > c1 || !ev.contains(p.X[1])) return;
    if (ev.label && !(p.labels[1] == *ev.label)) return;
    hits[i] = 1.0;
  });
  rep.mc = summarize(hits);

  // oracle: per daughter sample A, w(A) = int_C 2b(x0,a0+s)/psi(x0,a0) e^{-lambda s - int b} V(A) Hbar_0(A, t-s) ds
  std::vector<double> w(n, 0.0);
  if (c1 > c0) {
    const double psi0 = psi(x0, a0);
    parallel_for(n, threads, [&](std::size_t i) {
      Stream rng = Stream::from(seed, i, 0x1B);
      auto d = sample_division(x0, rng, m);
      if (!d.daughterA.is_alive() || !ev.contains(d.daughterA.x)) return;
      if (ev.label && !(JumpLabel{d.I.coords(), d.J, false} == *ev.label)) return;
      const auto& y = d.daughterA.x;
      const double Vy = psi.V(y);
      auto g = [&](double s) {
        return 2.0 * m.birth(x0, a0 + s) / psi0 * std::exp(-psi.lambda_psi * s - m.birth.cumulative(x0, a0, s)) * Vy *
               particle_survival(m, psi, y, t - s);
      };
      w[i] = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(g, c0, c1, 10, 1e-12);
    });
  }
  rep.oracle = summarize(w);
  rep.z = z_score(rep.mc, rep.oracle);
  return rep;
}

// Empirical P[min(T_all, tau) > t] on a grid.
inline std::vector<double> tail_T_all(const std::vector<ParticlePath>& paths, const std::vector<double>& grid) {
  std::vector<double> out;
  for (double t : grid) {
    double c = 0.0;
    for (const auto& p : paths)
      if (std::min(p.T_all, p.tau) > t) c += 1.0;
    out.push_back(c / static_cast<double>(paths.size()));
  }
  return out;
}

inline void write_paths_csv(std::ostream& os, const std::vector<ParticlePath>& paths, int dim) {
  os << "path_id,n,T_n,I_n,J_n";
  for (int j = 1; j <= dim; ++j) os << ",x_" << j;
  os << ",absorbed\n" << std::setprecision(17);
  for (std::size_t id = 0; id < paths.size(); ++id) {
    const auto& p = paths[id];
    for (std::size_t n = 0; n < p.T.size(); ++n) {
      os << id << ',' << n << ',' << p.T[n] << ',';
      const auto& l = p.labels[n];
      if (n == 0) os << ',';
      else if (l.cemetery) os << "cemetery,cemetery";
      else os << mask_to_string(l.I, dim) << ',' << mask_to_string(l.J, dim);
      for (int j = 0; j < dim; ++j) {
        os << ',';
        if (!p.X[n].empty()) os << p.X[n][static_cast<std::size_t>(j)];
      }
      os << ',' << (p.absorbed && n + 1 == p.T.size() ? 1 : 0) << '\n';
    }
  }
}

}  // namespace tbp
