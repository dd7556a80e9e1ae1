#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "tbp/errors.hpp"
#include "tbp/rng.hpp"

namespace tbp {

using TelomereVector = std::vector<double>;
using CoordMask = std::uint64_t;  // bit j set <=> coordinate j (0-based) belongs to the set

constexpr int kMaxChromosomes = 32;
constexpr double kInf = std::numeric_limits<double>::infinity();

inline CoordMask full_mask(int dim) {
  return dim >= 64 ? ~CoordMask{0} : ((CoordMask{1} << dim) - 1);
}
inline bool has(CoordMask m, int j) { return (m >> j) & 1u; }

// 1-based, brace-delimited, space-separated, e.g. "{1 4}".
inline std::string mask_to_string(CoordMask m, int dim) {
  std::ostringstream os;
  os << '{';
  bool first = true;
  for (int j = 0; j < dim; ++j)
    if (has(m, j)) {
      os << (first ? "" : " ") << (j + 1);
      first = false;
    }
  os << '}';
  return os.str();
}

struct CellState {
  bool senescent = false;
  TelomereVector x;
  double age = 0.0;

  static CellState alive(TelomereVector x, double age = 0.0) { return {false, std::move(x), age}; }
  static CellState dead() { return {true, {}, 0.0}; }
  bool is_alive() const { return !senescent; }
};

inline bool valid_trait(const TelomereVector& x) {
  return std::all_of(x.begin(), x.end(), [](double v) { return v >= 0.0 && std::isfinite(v); });
}

// One element of the family of admissible shortening sets: chromosome i
// contributes coordinate i (bit 0) or i+k (bit 1).
struct ShorteningIndexSet {
  int k = 0;
  std::uint64_t bits = 0;

  CoordMask coords() const {
    CoordMask m = 0;
    for (int i = 0; i < k; ++i) m |= CoordMask{1} << (i + k * static_cast<int>((bits >> i) & 1u));
    return m;
  }
  CoordMask complement() const { return full_mask(2 * k) & ~coords(); }
  std::vector<int> indices() const {  // 1-based, increasing
    std::vector<int> out;
    CoordMask m = coords();
    for (int j = 0; j < 2 * k; ++j)
      if (has(m, j)) out.push_back(j + 1);
    return out;
  }
  bool contains(int j1) const { return has(coords(), j1 - 1); }
  bool operator==(const ShorteningIndexSet& o) const { return k == o.k && bits == o.bits; }
};

inline std::vector<ShorteningIndexSet> enumerate_shortening_sets(int k) {
  if (k < 1 || k > 20) throw ParameterError("enumerate_shortening_sets: k must lie in [1,20], got " + std::to_string(k));
  std::vector<ShorteningIndexSet> out;
  out.reserve(std::size_t{1} << k);
  for (std::uint64_t b = 0; b < (std::uint64_t{1} << k); ++b) out.push_back({k, b});
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.indices() < b.indices(); });
  return out;
}

inline ShorteningIndexSet sample_shortening_set(int k, Stream& rng) {
  if (k < 1 || k > kMaxChromosomes) throw ParameterError("sample_shortening_set: k out of range");
  std::uint64_t bits = rng();
  if (k < 64) bits &= (std::uint64_t{1} << k) - 1;
  return {k, bits};
}

// ---------------------------------------------------------------- shortening

struct ShorteningLaw {
  enum class Kind { Uniform, Custom };
  Kind kind = Kind::Uniform;
  double delta = 1.0;
  std::function<double(double)> density;  // Custom only
  double g_min = 1.0, g_max = 1.0;

  static ShorteningLaw uniform(double delta) {
    if (!(delta > 0)) throw ParameterError("shortening: delta must be > 0");
    return {Kind::Uniform, delta, {}, 1.0 / delta, 1.0 / delta};
  }
  static ShorteningLaw custom(double delta, std::function<double(double)> g, double g_min, double g_max) {
    if (!(delta > 0)) throw ParameterError("shortening: delta must be > 0");
    ShorteningLaw s{Kind::Custom, delta, std::move(g), g_min, g_max};
    s.validate();
    return s;
  }

  double pdf(double u) const {
    if (u < 0 || u > delta) return 0.0;
    return kind == Kind::Uniform ? 1.0 / delta : density(u);
  }

  double sample(Stream& rng) const {
    if (kind == Kind::Uniform) return delta * rng.uniform();
    for (int it = 0; it < 1000000; ++it) {
      double u = delta * rng.uniform();
      if (rng.uniform() * g_max <= density(u)) return u;
    }
    throw NumericError("shortening: rejection sampler exhausted");
  }

  // Laplace transform at p (any real p; the support is compact).
  double laplace(double p) const {
    if (kind == Kind::Uniform) {
      double z = p * delta;
      if (std::abs(z) < 1e-8) return 1.0 - z / 2.0 + z * z / 6.0;
      return -std::expm1(-z) / z;
    }
    return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
        [&](double u) { return std::exp(-p * u) * density(u); }, 0.0, delta, 15, 1e-12);
  }

  void validate() const {
    double mass = kind == Kind::Uniform
                      ? 1.0
                      : boost::math::quadrature::gauss_kronrod<double, 61>::integrate(density, 0.0, delta, 15, 1e-12);
    if (std::abs(mass - 1.0) > 1e-9) throw ValidationError("shortening: density mass " + std::to_string(mass) + " != 1");
    if (!(g_min > 0)) throw ValidationError("shortening: g_min must be > 0");
    for (int i = 0; i <= 1000; ++i) {
      double v = pdf(delta * i / 1000.0);
      if (v < g_min * (1 - 1e-12) || v > g_max * (1 + 1e-12))
        throw ValidationError("shortening: density leaves [g_min, g_max]");
    }
  }
};

// ---------------------------------------------------------------- lengthening

// Probability q(y) that a telomere of post-shortening length y is lengthened.
struct QFunction {
  enum class Kind { Exp, Table };
  Kind kind = Kind::Exp;
  double c = 1.0, r = 0.05;  // q(y) = min(1, c e^{-r y})
  std::vector<double> ys, qs;  // Table knots; flat to the left, exponential tail to the right
  double tail_rate = 1.0;

  static QFunction exp_family(double c, double r) { return {Kind::Exp, c, r, {}, {}, 1.0}; }
  static QFunction table(std::vector<double> ys, std::vector<double> qs, double tail_rate) {
    if (ys.size() < 2 || ys.size() != qs.size()) throw ParameterError("q table: need >= 2 knots of matching length");
    for (std::size_t i = 1; i < ys.size(); ++i)
      if (!(ys[i] > ys[i - 1])) throw ParameterError("q table: knots must increase");
    return {Kind::Table, 1.0, 0.0, std::move(ys), std::move(qs), tail_rate};
  }

  double operator()(double y) const {
    if (kind == Kind::Exp) return std::min(1.0, c * std::exp(-r * y));
    if (y <= ys.front()) return qs.front();
    if (y >= ys.back()) return qs.back() * std::exp(-tail_rate * (y - ys.back()));
    auto it = std::upper_bound(ys.begin(), ys.end(), y);
    std::size_t i = static_cast<std::size_t>(it - ys.begin());
    double w = (y - ys[i - 1]) / (ys[i] - ys[i - 1]);
    return qs[i - 1] + w * (qs[i] - qs[i - 1]);
  }
};

enum class WidthKind { Constant, InverseLength };
enum class SelectorKind { All, Independent };

struct LengtheningLaw {
  double Delta = 1.0;
  WidthKind width = WidthKind::Constant;
  SelectorKind selector = SelectorKind::All;
  QFunction q;

  // Maximum lengthening Delta_x; h(x,.) is uniform on [0, Delta_x].
  double width_at(double x) const {
    if (width == WidthKind::Constant || x < 0) return Delta;
    return Delta / (x + 1.0);
  }
  double pdf(double x, double u) const {
    double w = width_at(x);
    return (u >= 0 && u <= w) ? 1.0 / w : 0.0;
  }
  double sample(double x, Stream& rng) const { return width_at(x) * rng.uniform(); }

  // L(h(x,.))(-lambda) = (e^{lambda w} - 1)/(lambda w).
  double laplace_neg(double x, double lambda) const {
    double z = lambda * width_at(x);
    if (std::abs(z) < 1e-8) return 1.0 + z / 2.0 + z * z / 6.0;
    return std::expm1(z) / z;
  }

  double prob_lengthen(double y) const { return selector == SelectorKind::All ? 1.0 : q(y); }

  // p_{J,M}(s1,s2).
  double p_mass(CoordMask J, CoordMask M, const TelomereVector& s1, const TelomereVector& s2) const {
    return p_marginal(J, s1) * p_marginal(M, s2);
  }
  // sum over M of p_{J,M}(s1,s2); both selectors factorise across daughters.
  double p_marginal(CoordMask J, const TelomereVector& s) const {
    const int dim = static_cast<int>(s.size());
    if (selector == SelectorKind::All) return J == full_mask(dim) ? 1.0 : 0.0;
    double p = 1.0;
    for (int j = 0; j < dim; ++j) {
      double qj = q(s[j]);
      p *= has(J, j) ? qj : 1.0 - qj;
    }
    return p;
  }

  CoordMask sample_set(const TelomereVector& s, Stream& rng) const {
    const int dim = static_cast<int>(s.size());
    if (selector == SelectorKind::All) return full_mask(dim);
    CoordMask m = 0;
    for (int j = 0; j < dim; ++j)
      if (rng.uniform() < q(s[j])) m |= CoordMask{1} << j;
    return m;
  }

  // E[prod_{i in J} f_i] with J drawn from the marginal selector law at s.
  double expected_product(const TelomereVector& s, const std::vector<double>& f) const {
    double out = 1.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      double p = prob_lengthen(s[i]);
      out *= 1.0 - p + p * f[i];
    }
    return out;
  }
};

// ---------------------------------------------------------------- birth rate

struct BirthRate {
  enum class Kind { Constant, AgeLinear, Poly, Custom };
  Kind kind = Kind::AgeLinear;
  std::vector<double> coeffs{0.0, 1.0};  // b(a) = sum c_i a^i
  std::function<double(const TelomereVector&, double)> custom;
  double b_tilde = 1.0;  // b <= b_tilde (1 + a^{d_b})
  int d_b = 1;
  double b0 = 1.0, a0 = 1.0;  // b >= b0 for a >= a0
  std::function<double(double)> lower, upper;  // optional brackets in a

  static BirthRate polynomial(std::vector<double> c, Kind kind) {
    for (double v : c)
      if (!(v >= 0) || !std::isfinite(v)) throw ParameterError("birth: coefficients must be finite and >= 0");
    while (c.size() > 1 && c.back() == 0.0) c.pop_back();
    if (c.empty()) c.push_back(0.0);
    BirthRate b;
    b.kind = kind;
    b.coeffs = std::move(c);
    b.d_b = static_cast<int>(b.coeffs.size()) - 1;
    b.b_tilde = 0.0;
    for (double v : b.coeffs) b.b_tilde += v;
    b.a0 = 1.0;
    b.b0 = b.eval_poly(1.0);
    if (b.coeffs.size() > 2 && kind != Kind::Poly) b.kind = Kind::Poly;
    if (b.coeffs.size() == 2 && kind == Kind::Constant) b.kind = Kind::AgeLinear;
    if (b.coeffs.size() == 1 && kind == Kind::AgeLinear) b.kind = Kind::Constant;
    return b;
  }
  static BirthRate constant(double c) { return polynomial({c}, Kind::Constant); }
  static BirthRate age_linear(double c0 = 0.0, double c1 = 1.0) { return polynomial({c0, c1}, Kind::AgeLinear); }
  static BirthRate custom_fn(std::function<double(const TelomereVector&, double)> f, double b_tilde, int d_b) {
    BirthRate b;
    b.kind = Kind::Custom;
    b.coeffs.clear();
    b.custom = std::move(f);
    b.b_tilde = b_tilde;
    b.d_b = d_b;
    b.b0 = 0.0;
    return b;
  }

  bool depends_on_x() const { return kind == Kind::Custom; }
  bool is_zero() const {
    return kind != Kind::Custom && std::all_of(coeffs.begin(), coeffs.end(), [](double c) { return c == 0.0; });
  }

  double eval_poly(double a) const {
    double v = 0.0;
    for (auto it = coeffs.rbegin(); it != coeffs.rend(); ++it) v = v * a + *it;
    return v;
  }
  double operator()(const TelomereVector& x, double a) const { return kind == Kind::Custom ? custom(x, a) : eval_poly(a); }
  double envelope(double a) const { return b_tilde * (1.0 + std::pow(a, d_b)); }

  // Integrated hazard over [a, a+s].
  double cumulative(const TelomereVector& x, double a, double s) const {
    if (kind != Kind::Custom) {
      double v = 0.0;
      for (std::size_t i = 0; i < coeffs.size(); ++i) {
        double n = static_cast<double>(i + 1);
        v += coeffs[i] * (std::pow(a + s, n) - std::pow(a, n)) / n;
      }
      return v;
    }
    return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
        [&](double u) { return custom(x, u); }, a, a + s, 10, 1e-12);
  }

  // Waiting time s solving cumulative(a, s) = e for the closed-form kinds.
  std::optional<double> invert_closed_form(double a, double e) const {
    if (is_zero()) return kInf;
    if (kind == Kind::Constant) return e / coeffs[0];
    if (kind == Kind::AgeLinear) {
      double c0 = coeffs[0], c1 = coeffs[1];
      double r = c0 + c1 * a;
      return 2.0 * e / (r + std::sqrt(r * r + 2.0 * c1 * e));
    }
    return std::nullopt;
  }

  // Thinning against the polynomial envelope, one constant bound per window.
  double sample_wait_thinning(const TelomereVector& x, double a, Stream& rng) const {
    double s = 0.0;
    long rejections = 0;
    while (true) {
      double u = a + s;
      double w = 1.0 / std::max(envelope(u), 1e-12);
      double bound = envelope(u + w);
      double step = rng.exponential(bound);
      if (step >= w) {
        s += w;
      } else {
        s += step;
        double rate = (*this)(x, a + s);
        if (rate > bound * (1 + 1e-12))
          throw ConfigurationError("birth: rate exceeds its declared envelope b_tilde(1+a^d_b)");
        if (rng.uniform() * bound < rate) return s;
      }
      if (++rejections > 1000000)
        throw ConfigurationError("birth: hazard integral numerically non-divergent (thinning guard exceeded)");
    }
  }

  double sample_wait(const TelomereVector& x, double a, Stream& rng) const {
    if (is_zero()) return kInf;
    if (auto s = invert_closed_form(a, -std::log(rng.uniform_pos()))) return *s;
    return sample_wait_thinning(x, a, rng);
  }

  // Sampled envelope and bracket checks.
  void validate(const std::vector<TelomereVector>& xs = {}) const {
    std::vector<TelomereVector> pts = xs;
    if (pts.empty()) pts.push_back({});
    for (const auto& x : pts)
      for (int i = 0; i <= 400; ++i) {
        double a = i * 0.05 + (i > 200 ? std::pow(1.05, i - 200) : 0.0);
        double v = (*this)(x, a);
        if (v < 0) throw ValidationError("birth: negative rate");
        if (v > envelope(a) * (1 + 1e-12)) throw ValidationError("birth: b exceeds b_tilde(1+a^d_b)");
        if (a >= a0 && v < b0 * (1 - 1e-12)) throw ValidationError("birth: b below b0 past a0");
        if (lower && lower(a) > v * (1 + 1e-12)) throw ValidationError("birth: lower bracket exceeds b");
        if (upper && upper(a) < v * (1 - 1e-12)) throw ValidationError("birth: upper bracket below b");
      }
  }

  std::function<double(double)> lower_rate() const {
    if (lower) return lower;
    if (kind == Kind::Custom) return {};
    return [b = *this](double a) { return b.eval_poly(a); };
  }
  std::function<double(double)> upper_rate() const {
    if (upper) return upper;
    if (kind == Kind::Custom) return {};
    return [b = *this](double a) { return b.eval_poly(a); };
  }
};

// ---------------------------------------------------------------- model spec

enum class Preset { Model1, Model2, Custom };

inline std::string preset_name(Preset p) {
  switch (p) {
    case Preset::Model1: return "model1";
    case Preset::Model2: return "model2";
    default: return "custom";
  }
}

struct BirthParams {
  BirthRate::Kind kind = BirthRate::Kind::AgeLinear;
  std::vector<double> coeffs{0.0, 1.0};
  bool operator==(const BirthParams&) const = default;
};

struct QParams {
  QFunction::Kind kind = QFunction::Kind::Exp;
  double c = 1.0, r = 0.05;
  std::vector<double> ys, qs;
  double tail_rate = 1.0;
  bool operator==(const QParams&) const = default;

  QFunction build() const {
    return kind == QFunction::Kind::Exp ? QFunction::exp_family(c, r) : QFunction::table(ys, qs, tail_rate);
  }
};

// Plain parameters a ModelSpec is rebuilt from (config round trips go through this).
struct ModelParams {
  int k = 1;
  double delta = 1.0;
  double Delta = 100.0;
  Preset preset = Preset::Model2;
  double gamma = 0.3;  // Model1
  QParams q;           // Model2, and Custom with independent selector
  BirthParams birth;
  // Custom only
  WidthKind width = WidthKind::Constant;
  SelectorKind selector = SelectorKind::Independent;
  double B_max = 0.0;
  int D = 1;
  double eps0 = 0.0;
  double L_renew = 0.0;
  bool operator==(const ModelParams&) const = default;
};

struct ModelSpec {
  ModelParams params;
  int k = 1;
  ShorteningLaw shortening;
  LengtheningLaw lengthening;
  BirthRate birth;
  // Renewal data: K_renew = [0, L_renew]^{2k} inside [0, B_max]^{2k}.
  double B_max = 0.0;
  int D = 1;
  double eps0 = 0.0;
  double L_renew = 0.0;

  int dim() const { return 2 * k; }
  double delta() const { return shortening.delta; }
  double Delta() const { return lengthening.Delta; }
};

inline BirthRate build_birth(const BirthParams& p) {
  switch (p.kind) {
    case BirthRate::Kind::Constant:
      if (p.coeffs.size() != 1) throw ParameterError("birth.coeffs: constant kind takes exactly one coefficient");
      return BirthRate::polynomial(p.coeffs, BirthRate::Kind::Constant);
    case BirthRate::Kind::AgeLinear:
      if (p.coeffs.size() != 2) throw ParameterError("birth.coeffs: age_linear kind takes exactly two coefficients");
      return BirthRate::polynomial(p.coeffs, BirthRate::Kind::AgeLinear);
    case BirthRate::Kind::Poly:
      if (p.coeffs.empty()) throw ParameterError("birth.coeffs: custom_poly needs at least one coefficient");
      return BirthRate::polynomial(p.coeffs, BirthRate::Kind::Poly);
    default:
      throw ParameterError("birth: unsupported kind");
  }
}

inline double model1_ratio_power(int k, double delta, double Delta) {
  return std::pow((Delta - delta) / Delta, 2.0 * k * k + 4.0 * k);
}
inline double model2_ratio_power(int k, double delta, double Delta) {
  return std::pow((Delta - delta) / Delta, 2.0 * k);
}
inline double model2_q_bound(int k, double delta, double Delta) {
  double r = model2_ratio_power(k, delta, Delta);
  return std::pow((r + 0.5) / (2.0 * r), 1.0 / (8.0 * k));
}

namespace detail {

inline void check_common(const ModelParams& p, std::vector<std::string>& errs) {
  if (p.k < 1 || p.k > kMaxChromosomes) errs.push_back("k must lie in [1," + std::to_string(kMaxChromosomes) + "]");
  if (!(p.delta > 0)) errs.push_back("delta must be > 0");
  if (!(p.Delta > 0)) errs.push_back("Delta must be > 0");
  if (p.delta > 0 && p.Delta > 0 && !(p.Delta > p.delta)) errs.push_back("Delta must exceed delta");
}

inline void raise(const std::vector<std::string>& errs) {
  if (errs.empty()) return;
  std::string msg = "model validation failed:";
  for (const auto& e : errs) msg += "\n  - " + e;
  throw ValidationError(msg);
}

// f(x) = x - gamma delta + Delta/(x+1) + Delta/max(x-delta+1,1).
inline double model1_f(double x, double gamma, double delta, double Delta) {
  return x - gamma * delta + Delta / (x + 1.0) + Delta / std::max(x - delta + 1.0, 1.0);
}

// Smallest L (on a geometric search) with L > Delta, f <= L - gamma delta/2 on [0,L]
// and k Delta/(L - gamma delta/2 + 1) <= gamma delta/2.
inline double model1_renewal_length(int k, double delta, double Delta, double gamma) {
  const double h = gamma * delta / 2.0;
  double L = std::max(Delta * (1.0 + 1e-9), k * Delta / h + h - 1.0);
  for (int it = 0; it < 400; ++it, L *= 1.02) {
    bool ok = true;
    const int n = 20000;
    for (int i = 0; i <= n && ok; ++i) {
      double x = L * i / n;
      if (model1_f(x, gamma, delta, Delta) > L - h) ok = false;
    }
    // f is convex-like away from the kink at delta; also probe just past the kink
    if (ok && delta <= L && model1_f(delta, gamma, delta, Delta) > L - h) ok = false;
    if (ok) return L;
  }
  throw NumericError("model1: renewal length search did not converge");
}

// Smallest y0 with q(y) <= 1 - bound for all y >= y0, scanned on a grid.
inline double q_threshold(const QFunction& q, double bound, double start, double span) {
  const double target = 1.0 - bound;
  const int n = 200000;
  double last_bad = -kInf;
  for (int i = 0; i <= n; ++i) {
    double y = start + span * i / n;
    if (q(y) > target) last_bad = y;
  }
  if (last_bad == start + span) throw ValidationError("model2: 1 - q never reaches the q bound within the scan range");
  return last_bad == -kInf ? start : last_bad;
}

}  // namespace detail

inline ModelSpec build_model(const ModelParams& p) {
  std::vector<std::string> errs;
  detail::check_common(p, errs);
  detail::raise(errs);

  ModelSpec m;
  m.params = p;
  m.k = p.k;
  m.shortening = ShorteningLaw::uniform(p.delta);
  m.birth = build_birth(p.birth);
  m.lengthening.Delta = p.Delta;

  if (p.preset == Preset::Model1) {
    m.lengthening.width = WidthKind::InverseLength;
    m.lengthening.selector = SelectorKind::All;
    double r = model1_ratio_power(p.k, p.delta, p.Delta);
    if (!(r > 0.25)) errs.push_back("((Delta-delta)/Delta)^(2k^2+4k) > 1/4 violated (value " + std::to_string(r) + ")");
    if (!(p.gamma > 0 && p.gamma < 1)) errs.push_back("gamma must lie in (0,1)");
    else if (!(std::pow(1 - p.gamma, 2.0 * p.k) * r > 0.25))
      errs.push_back("(1-gamma)^(2k) ((Delta-delta)/Delta)^(2k^2+4k) > 1/4 violated");
    detail::raise(errs);
    m.D = p.k + 2;
    m.eps0 = 4.0 * std::pow(1 - p.gamma, 2.0 * p.k) * r - 1.0;
    m.L_renew = detail::model1_renewal_length(p.k, p.delta, p.Delta, p.gamma);
    m.B_max = m.L_renew + m.D * p.Delta;
  } else if (p.preset == Preset::Model2) {
    m.lengthening.width = WidthKind::Constant;
    m.lengthening.selector = SelectorKind::Independent;
    try {
      m.lengthening.q = p.q.build();
    } catch (const ParameterError& e) {
      errs.push_back(e.what());
      detail::raise(errs);
    }
    double r = model2_ratio_power(p.k, p.delta, p.Delta);
    if (!(r > 0.5)) errs.push_back("((Delta-delta)/Delta)^(2k) > 1/2 violated (value " + std::to_string(r) + ")");
    const auto& q = m.lengthening.q;
    double q_inf = kInf;
    for (int i = 0; i < 1000; ++i) q_inf = std::min(q_inf, q(-p.delta + p.delta * i / 1000.0));
    double bound = model2_q_bound(p.k, p.delta, p.Delta);
    if (r > 0.5 && !(q_inf >= bound))
      errs.push_back("inf_{[-delta,0)} q >= bound violated (inf q = " + std::to_string(q_inf) +
                     ", bound = " + std::to_string(bound) + ")");
    for (int i = 0; i <= 2000; ++i) {
      double y = -p.delta + (20.0 * p.Delta + p.delta) * i / 2000.0;
      double v = q(y);
      if (!(v > 0 && v <= 1)) {
        errs.push_back("q must take values in (0,1] (q(" + std::to_string(y) + ") = " + std::to_string(v) + ")");
        break;
      }
    }
    if (!(q(1e9) < 1e-6)) errs.push_back("q must vanish at infinity");
    detail::raise(errs);
    m.D = 1;
    m.eps0 = r - 0.5;
    double y0 = detail::q_threshold(q, bound, 0.0, 1e4 * p.Delta);
    m.B_max = std::max(2.0 * p.Delta * (1.0 + 1e-9), y0 + p.Delta);
    m.L_renew = m.B_max;
  } else {
    m.lengthening.width = p.width;
    m.lengthening.selector = p.selector;
    if (p.selector == SelectorKind::Independent) m.lengthening.q = p.q.build();
    if (!(p.B_max > 0)) errs.push_back("custom preset requires B_max > 0");
    if (p.D < 1) errs.push_back("custom preset requires D >= 1");
    detail::raise(errs);
    m.B_max = p.B_max;
    m.D = p.D;
    m.eps0 = p.eps0;
    m.L_renew = p.L_renew > 0 ? p.L_renew : p.B_max;
  }
  return m;
}

inline ModelSpec build_model1(int k, double delta, double Delta, double gamma, BirthParams birth = {}) {
  ModelParams p;
  p.k = k;
  p.delta = delta;
  p.Delta = Delta;
  p.preset = Preset::Model1;
  p.gamma = gamma;
  p.birth = birth;
  return build_model(p);
}

inline ModelSpec build_model2(int k, double delta, double Delta, QParams q = {}, BirthParams birth = {}) {
  ModelParams p;
  p.k = k;
  p.delta = delta;
  p.Delta = Delta;
  p.preset = Preset::Model2;
  p.q = std::move(q);
  p.birth = birth;
  return build_model(p);
}

// Numeric checks of the lengthening law on sampled pairs: unit mass, symmetry, p sums to one.
inline void validate_lengthening(const ModelSpec& m, Stream& rng, int n_pairs = 50) {
  const int dim = m.dim();
  const auto& L = m.lengthening;
  for (int t = 0; t < n_pairs; ++t) {
    TelomereVector s1(dim), s2(dim);
    for (int j = 0; j < dim; ++j) {
      s1[j] = rng.uniform(-m.delta(), 3 * m.Delta());
      s2[j] = rng.uniform(-m.delta(), 3 * m.Delta());
    }
    double w = L.width_at(s1[0]);
    double mass = boost::math::quadrature::gauss_kronrod<double, 15>::integrate(
        [&](double u) { return L.pdf(s1[0], u); }, 0.0, w, 0, 1e-12);
    if (std::abs(mass - 1.0) > 1e-9) throw ValidationError("lengthening: h(x,.) mass != 1");
    if (dim <= 8) {
      double total = 0.0;
      for (CoordMask J = 0; J <= full_mask(dim); ++J)
        for (CoordMask M = 0; M <= full_mask(dim); ++M) {
          double a = L.p_mass(J, M, s1, s2), b = L.p_mass(M, J, s2, s1);
          if (std::abs(a - b) > 1e-12) throw ValidationError("lengthening: p is not symmetric");
          total += a;
        }
      if (std::abs(total - 1.0) > 1e-9) throw ValidationError("lengthening: p does not sum to 1");
    }
  }
}

// ---------------------------------------------------------------- sampling

struct DivisionOutcome {
  CellState daughterA, daughterB;
  ShorteningIndexSet I;
  CoordMask J = 0, M = 0;
  TelomereVector U, Up, V, Vp;
};

// Division with the shortening set I fixed.
inline DivisionOutcome sample_division_given(const TelomereVector& x, const ShorteningIndexSet& I, Stream& rng,
                                             const ModelSpec& m) {
  const int dim = m.dim();
  DivisionOutcome out;
  out.I = I;
  const CoordMask ia = out.I.coords();
  out.U.assign(dim, 0.0);
  out.Up.assign(dim, 0.0);
  for (int j = 0; j < dim; ++j)
    if (has(ia, j)) out.U[j] = m.shortening.sample(rng);
  for (int j = 0; j < dim; ++j)
    if (!has(ia, j)) out.Up[j] = m.shortening.sample(rng);
  TelomereVector s1(dim), s2(dim);
  for (int j = 0; j < dim; ++j) {
    s1[j] = x[j] - out.U[j];
    s2[j] = x[j] - out.Up[j];
  }
  out.J = m.lengthening.sample_set(s1, rng);
  out.M = m.lengthening.sample_set(s2, rng);
  out.V.assign(dim, 0.0);
  out.Vp.assign(dim, 0.0);
  for (int j = 0; j < dim; ++j)
    if (has(out.J, j)) out.V[j] = m.lengthening.sample(s1[j], rng);
  for (int j = 0; j < dim; ++j)
    if (has(out.M, j)) out.Vp[j] = m.lengthening.sample(s2[j], rng);
  TelomereVector ya(dim), yb(dim);
  bool dead_a = false, dead_b = false;
  for (int j = 0; j < dim; ++j) {
    ya[j] = s1[j] + out.V[j];
    yb[j] = s2[j] + out.Vp[j];
    dead_a = dead_a || ya[j] < 0.0;
    dead_b = dead_b || yb[j] < 0.0;
  }
  out.daughterA = dead_a ? CellState::dead() : CellState::alive(std::move(ya), 0.0);
  out.daughterB = dead_b ? CellState::dead() : CellState::alive(std::move(yb), 0.0);
  return out;
}

inline DivisionOutcome sample_division(const TelomereVector& x, Stream& rng, const ModelSpec& m) {
  ShorteningIndexSet I = sample_shortening_set(m.k, rng);
  return sample_division_given(x, I, rng, m);
}

inline CellState kernel_sample_daughter(const TelomereVector& x, Stream& rng, const ModelSpec& m) {
  return sample_division(x, rng, m).daughterA;
}

inline double sample_division_time(const TelomereVector& x, double a, Stream& rng, const ModelSpec& m) {
  return m.birth.sample_wait(x, a, rng);
}

}  // namespace tbp
