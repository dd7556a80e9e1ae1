#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "tbp/errors.hpp"
#include "tbp/model.hpp"
#include "tbp/population.hpp"
#include "tbp/stats.hpp"

namespace tbp {

struct ProfileHistogram {
  std::vector<std::vector<double>> x_edges;  // per coordinate
  std::vector<double> a_edges;
  std::map<std::vector<int>, double> weights;  // key: x-bin per coordinate, then a-bin
  std::size_t samples = 0;
  double t_snapshot = 0.0;
  double lambda_hat = 0.0;
  // pooled raw samples, kept for distribution tests
  std::vector<TelomereVector> xs;
  std::vector<double> ages;

  int dim() const { return static_cast<int>(x_edges.size()); }
  double total() const {
    double s = 0.0;
    for (const auto& [k, w] : weights) s += w;
    return s;
  }
};

struct BinSpec {
  int x_bins = 32;
  int a_bins = 64;
  std::vector<std::vector<double>> x_edges;  // optional fixed edges
  std::vector<double> a_edges;
};

inline std::vector<double> uniform_edges(double lo, double hi, int n) {
  if (n < 1) throw ParameterError("histogram: need at least one bin");
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  std::vector<double> e(static_cast<std::size_t>(n) + 1);
  for (int i = 0; i <= n; ++i) e[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / n;
  return e;
}

inline int bin_index(const std::vector<double>& edges, double v) {
  if (v <= edges.front()) return 0;
  if (v >= edges.back()) return static_cast<int>(edges.size()) - 2;
  return static_cast<int>(std::upper_bound(edges.begin(), edges.end(), v) - edges.begin()) - 1;
}

inline std::vector<int> x_bin_of(const ProfileHistogram& h, const TelomereVector& x) {
  std::vector<int> k(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) k[j] = bin_index(h.x_edges[j], x[j]);
  return k;
}

inline ProfileHistogram build_histogram(std::vector<TelomereVector> xs, std::vector<double> ages, const BinSpec& bins) {
  if (xs.empty()) throw EstimationError("histogram: no samples");
  const std::size_t d = xs.front().size();
  ProfileHistogram h;
  h.x_edges = bins.x_edges;
  if (h.x_edges.empty())
    for (std::size_t j = 0; j < d; ++j) {
      double lo = kInf, hi = -kInf;
      for (const auto& x : xs) {
        lo = std::min(lo, x[j]);
        hi = std::max(hi, x[j]);
      }
      h.x_edges.push_back(uniform_edges(lo, hi, bins.x_bins));
    }
  h.a_edges = bins.a_edges;
  if (h.a_edges.empty()) h.a_edges = uniform_edges(0.0, *std::max_element(ages.begin(), ages.end()), bins.a_bins);
  for (const auto& e : h.x_edges)
    for (std::size_t i = 1; i < e.size(); ++i)
      if (!(e[i] > e[i - 1])) throw ParameterError("histogram: bin edges must increase");
  const double w = 1.0 / static_cast<double>(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    auto key = x_bin_of(h, xs[i]);
    key.push_back(bin_index(h.a_edges, ages[i]));
    h.weights[key] += w;
  }
  // exact renormalisation
  double tot = h.total();
  for (auto& [k, v] : h.weights) v /= tot;
  h.samples = xs.size();
  h.xs = std::move(xs);
  h.ages = std::move(ages);
  return h;
}

// Pools every alive individual across replicates at t_snapshot.
inline ProfileHistogram estimate_stationary(const ModelSpec& m, const CellState& init, double t_burn, double t_snapshot,
                                            std::size_t n_replicates, const BinSpec& bins, std::size_t cap,
                                            std::uint64_t seed, unsigned threads = 0) {
  if (!(t_snapshot > t_burn)) throw ParameterError("estimate_stationary: t_snapshot must exceed t_burn");
  ReplicateBatch b;
  b.model = &m;
  b.init = init;
  b.horizon = t_snapshot;
  b.cap = cap;
  b.master_seed = seed;
  std::vector<std::vector<AliveCell>> alive(n_replicates);
  parallel_for(n_replicates, threads, [&](std::size_t r) {
    auto res = simulate_tree(b, r);
    if (!res.capped) alive[r] = std::move(res.alive);
  });
  std::vector<TelomereVector> xs;
  std::vector<double> ages;
  for (auto& v : alive)
    for (auto& c : v) {
      xs.push_back(std::move(c.x));
      ages.push_back(c.age);
    }
  if (xs.empty()) throw EstimationError("estimate_stationary: population extinct in every replicate");
  auto h = build_histogram(std::move(xs), std::move(ages), bins);
  h.t_snapshot = t_snapshot;
  return h;
}

// x-marginal total variation distance between two histograms on the same edges.
inline double histogram_tv(const ProfileHistogram& a, const ProfileHistogram& b) {
  if (a.x_edges != b.x_edges) throw ParameterError("histogram_tv: histograms use different x edges");
  std::map<std::vector<int>, double> diff;
  for (const auto& [k, w] : a.weights) diff[std::vector<int>(k.begin(), k.end() - 1)] += w;
  for (const auto& [k, w] : b.weights) diff[std::vector<int>(k.begin(), k.end() - 1)] -= w;
  double tv = 0.0;
  for (const auto& [k, v] : diff) tv += std::abs(v);
  return 0.5 * tv;
}

// ---------------------------------------------------------------- product form

struct BinKS {
  std::vector<int> x_bin;
  TelomereVector center;
  std::size_t n = 0;
  double ks = 0.0;
};

struct ProductFormReport {
  double lambda_hat = 0.0;
  std::vector<BinKS> bins;
  std::vector<std::string> notices;
  double max_ks() const {
    double m = 0.0;
    for (const auto& b : bins) m = std::max(m, b.ks);
    return m;
  }
};

// Normalised cdf of a -> exp(-lambda a - int_0^a b(x,s) ds), tabulated.
inline std::function<double(double)> product_form_cdf(const BirthRate& b, const TelomereVector& x, double lambda) {
  if (b.kind == BirthRate::Kind::Constant) {
    double r = lambda + b.coeffs[0];
    if (!(r > 0)) throw EstimationError("product form: lambda + b must be > 0");
    return [r](double a) { return a <= 0 ? 0.0 : -std::expm1(-r * a); };
  }
  auto w = [&](double a) { return std::exp(-lambda * a - b.cumulative(x, 0.0, a)); };
  double A = 1.0;
  while (w(A) > 1e-14) {
    A *= 2.0;
    if (A > 1e6) throw EstimationError("product form: weight is not integrable");
  }
  const int n = 200000;
  std::vector<double> grid(n + 1), cum(n + 1, 0.0);
  double prev = w(0.0);
  for (int i = 1; i <= n; ++i) {
    double a = A * i / n, v = w(a);
    cum[static_cast<std::size_t>(i)] = cum[static_cast<std::size_t>(i - 1)] + 0.5 * (prev + v) * A / n;
    prev = v;
  }
  const double tot = cum.back();
  for (auto& c : cum) c /= tot;
  return [cum, A, n](double a) {
    if (a <= 0) return 0.0;
    if (a >= A) return 1.0;
    double pos = a / A * n;
    auto i = static_cast<std::size_t>(pos);
    double f = pos - static_cast<double>(i);
    return cum[i] + f * (cum[i + 1] - cum[i]);
  };
}

inline ProductFormReport check_product_form(const ProfileHistogram& h, const ModelSpec& m, double lambda_hat,
                                            std::size_t min_samples = 500) {
  ProductFormReport rep;
  rep.lambda_hat = lambda_hat;
  std::map<std::vector<int>, std::vector<double>> groups;
  for (std::size_t i = 0; i < h.xs.size(); ++i) groups[x_bin_of(h, h.xs[i])].push_back(h.ages[i]);
  for (auto& [key, ages] : groups) {
    TelomereVector c(key.size());
    for (std::size_t j = 0; j < key.size(); ++j) {
      const auto& e = h.x_edges[j];
      c[j] = 0.5 * (e[static_cast<std::size_t>(key[j])] + e[static_cast<std::size_t>(key[j]) + 1]);
    }
    if (ages.size() < min_samples) {
      rep.notices.push_back("bin skipped with " + std::to_string(ages.size()) + " samples");
      continue;
    }
    auto cdf = product_form_cdf(m.birth, c, lambda_hat);
    rep.bins.push_back({key, c, ages.size(), ks_statistic(ages, cdf)});
  }
  return rep;
}

// ---------------------------------------------------------------- factorisation

// TV between the joint x-marginal and the product of the per-coordinate marginals.
inline double marginal_factorization_report(const ProfileHistogram& h) {
  if (h.dim() > 4) throw ParameterError("marginal_factorization_report: needs 2k <= 4");
  const std::size_t d = static_cast<std::size_t>(h.dim());
  std::map<std::vector<int>, double> joint;
  std::vector<std::vector<double>> marg(d);
  for (std::size_t j = 0; j < d; ++j) marg[j].assign(h.x_edges[j].size() - 1, 0.0);
  for (const auto& [k, w] : h.weights) {
    std::vector<int> xk(k.begin(), k.end() - 1);
    joint[xk] += w;
    for (std::size_t j = 0; j < d; ++j) marg[j][static_cast<std::size_t>(xk[j])] += w;
  }
  // enumerate the full product grid
  double tv = 0.0;
  std::vector<int> idx(d, 0);
  while (true) {
    double p = 1.0;
    for (std::size_t j = 0; j < d; ++j) p *= marg[j][static_cast<std::size_t>(idx[j])];
    auto it = joint.find(idx);
    tv += std::abs((it == joint.end() ? 0.0 : it->second) - p);
    std::size_t j = 0;
    while (j < d && ++idx[j] == static_cast<int>(marg[j].size())) idx[j++] = 0;
    if (j == d) break;
  }
  return 0.5 * tv;
}

inline void write_histogram_csv(std::ostream& os, const ProfileHistogram& h) {
  os << std::setprecision(17);
  for (int j = 1; j <= h.dim(); ++j) os << "x_" << j << ',';
  os << "age,weight\n";
  for (const auto& [k, w] : h.weights) {
    for (int j = 0; j < h.dim(); ++j) {
      const auto& e = h.x_edges[static_cast<std::size_t>(j)];
      os << 0.5 * (e[static_cast<std::size_t>(k[static_cast<std::size_t>(j)])] + e[static_cast<std::size_t>(k[static_cast<std::size_t>(j)]) + 1]) << ',';
    }
    int ai = k.back();
    os << 0.5 * (h.a_edges[static_cast<std::size_t>(ai)] + h.a_edges[static_cast<std::size_t>(ai) + 1]) << ',' << w << '\n';
  }
}

inline void write_ks_csv(std::ostream& os, const ProductFormReport& r) {
  os << "bin,n,ks\n" << std::setprecision(17);
  for (const auto& b : r.bins) {
    std::string key;
    for (std::size_t j = 0; j < b.x_bin.size(); ++j) key += (j ? ":" : "") + std::to_string(b.x_bin[j]);
    os << key << ',' << b.n << ',' << b.ks << '\n';
  }
}

}  // namespace tbp
