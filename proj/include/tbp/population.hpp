#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <ostream>
#include <queue>
#include <string>
#include <utility>
#include <vector>

#include "tbp/errors.hpp"
#include "tbp/model.hpp"
#include "tbp/rng.hpp"
#include "tbp/stats.hpp"

namespace tbp {

using Label = std::vector<int>;  // Ulam-Harris word, digits in {1,2}

inline std::string label_to_string(const Label& l) {
  if (l.empty()) return "0";
  std::string s;
  for (int d : l) s += static_cast<char>('0' + d);
  return s;
}

struct PopulationEvent {
  enum class Kind { Division, Senescence };
  double time = 0.0;
  Label parent;
  Kind kind = Kind::Division;
  CoordMask I = 0, J = 0, M = 0;  // Division
  int daughter = 0;               // Senescence: 1 or 2
};

struct AliveCell {
  Label label;
  TelomereVector x;
  double age = 0.0;
};

struct SimulationResult {
  std::vector<AliveCell> alive;
  std::vector<PopulationEvent> events;
  std::vector<double> observed_counts;  // alive count at each observation time
  std::uint64_t divisions = 0;
  std::uint64_t senescent_daughters = 0;
  std::uint64_t created = 1;
  bool capped = false;

  bool accounting_holds() const {
    return created == 1 + 2 * divisions && alive.size() + senescent_daughters + divisions == created;
  }
};

struct ReplicateBatch {
  const ModelSpec* model = nullptr;
  CellState init;
  double horizon = 0.0;
  std::size_t cap = 100000;
  std::uint64_t master_seed = 0;
  std::size_t n_replicates = 1;
  std::vector<double> observe;  // increasing, within [0, horizon]
  bool record_events = false;
  bool record_alive = true;
};

namespace detail {

struct Node {
  std::int64_t parent = -1;
  int digit = 0;
  std::uint64_t label_hash = 0;
  double birth_time = 0.0;  // age at time t is t - birth_time
  TelomereVector x;
  bool alive = true;
};

inline Label node_label(const std::vector<Node>& nodes, std::int64_t i) {
  Label l;
  for (; i >= 0 && nodes[static_cast<std::size_t>(i)].parent >= 0; i = nodes[static_cast<std::size_t>(i)].parent)
    l.push_back(nodes[static_cast<std::size_t>(i)].digit);
  std::reverse(l.begin(), l.end());
  return l;
}

}  // namespace detail

// One replicate tree. Each cell draws from its own stream keyed by (seed, replicate, label),
// so the run does not depend on the order in which simultaneous work is scheduled.
inline SimulationResult simulate_tree(const ReplicateBatch& batch, std::size_t replicate) {
  if (!batch.model) throw ParameterError("simulate_tree: no model");
  if (!batch.init.is_alive()) throw ParameterError("simulate_tree: initial cell must be alive");
  if (batch.cap < 1) throw ParameterError("simulate_tree: cap must be >= 1");
  if (!(batch.horizon >= 0) || !std::isfinite(batch.horizon)) throw ParameterError("simulate_tree: horizon must be finite and >= 0");
  if (static_cast<int>(batch.init.x.size()) != batch.model->dim() || !valid_trait(batch.init.x))
    throw ParameterError("simulate_tree: initial trait must have 2k nonnegative entries");
  const ModelSpec& m = *batch.model;

  SimulationResult res;
  std::vector<detail::Node> nodes;
  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;

  auto schedule = [&](std::size_t id) {
    const auto& n = nodes[id];
    Stream s = Stream::from(batch.master_seed, replicate, n.label_hash).split(0);
    const bool root = n.parent < 0;
    double w = sample_division_time(n.x, root ? batch.init.age : 0.0, s, m);
    queue.push({(root ? 0.0 : n.birth_time) + w, id});
  };

  nodes.push_back({-1, 0, 0x5EEDULL, -batch.init.age, batch.init.x, true});
  schedule(0);
  std::size_t alive_count = 1;
  std::size_t next_obs = 0;

  auto observe_until = [&](double t) {
    while (next_obs < batch.observe.size() && batch.observe[next_obs] <= t) {
      res.observed_counts.push_back(static_cast<double>(alive_count));
      ++next_obs;
    }
  };

  while (!queue.empty()) {
    auto [t, id] = queue.top();
    if (t > batch.horizon) break;
    queue.pop();
    observe_until(std::nextafter(t, -kInf));

    Stream s = Stream::from(batch.master_seed, replicate, nodes[id].label_hash).split(1);
    DivisionOutcome d = sample_division(nodes[id].x, s, m);
    int born_alive = d.daughterA.is_alive() + d.daughterB.is_alive();
    if (alive_count - 1 + static_cast<std::size_t>(born_alive) > batch.cap) {
      res.capped = true;
      break;
    }
    ++res.divisions;
    res.created += 2;
    nodes[id].alive = false;
    --alive_count;
    if (batch.record_events)
      res.events.push_back({t, detail::node_label(nodes, static_cast<std::int64_t>(id)),
                            PopulationEvent::Kind::Division, d.I.coords(), d.J, d.M, 0});
    const std::uint64_t parent_hash = nodes[id].label_hash;
    CellState* kids[2] = {&d.daughterA, &d.daughterB};
    for (int c = 0; c < 2; ++c) {
      if (!kids[c]->is_alive()) {
        ++res.senescent_daughters;
        if (batch.record_events)
          res.events.push_back({t, detail::node_label(nodes, static_cast<std::int64_t>(id)),
                                PopulationEvent::Kind::Senescence, 0, 0, 0, c + 1});
        continue;
      }
      nodes.push_back({static_cast<std::int64_t>(id), c + 1, hash_combine(parent_hash, static_cast<std::uint64_t>(c + 1)),
                       t, std::move(kids[c]->x), true});
      ++alive_count;
      schedule(nodes.size() - 1);
    }
  }
  observe_until(kInf);

  if (batch.record_alive || !res.capped) {
    for (std::size_t i = 0; i < nodes.size(); ++i)
      if (nodes[i].alive)
        res.alive.push_back({detail::node_label(nodes, static_cast<std::int64_t>(i)), nodes[i].x,
                             batch.horizon - nodes[i].birth_time});
  }
  return res;
}

inline SimulationResult simulate_tree(const ModelSpec& m, const CellState& init, double horizon, std::size_t cap,
                                      std::uint64_t seed, std::size_t replicate = 0, bool record_events = true) {
  ReplicateBatch b;
  b.model = &m;
  b.init = init;
  b.horizon = horizon;
  b.cap = cap;
  b.master_seed = seed;
  b.record_events = record_events;
  return simulate_tree(b, replicate);
}

struct MtEstimate {
  double mean = 0.0, se = 0.0;
  std::size_t n_valid = 0, n_capped = 0;
};

using TestFunction = std::function<double(const TelomereVector&, double)>;

// Monte Carlo M_t f(x,a): average over replicates of sum_{u alive at t} f(x^u, a^u).
inline MtEstimate estimate_M_t(const ModelSpec& m, const CellState& init, const TestFunction& f, double t,
                               std::size_t n_replicates, std::uint64_t seed, std::size_t cap = 1000000,
                               unsigned threads = 0) {
  ReplicateBatch b;
  b.model = &m;
  b.init = init;
  b.horizon = t;
  b.cap = cap;
  b.master_seed = seed;
  b.n_replicates = n_replicates;
  std::vector<double> sums(n_replicates, 0.0);
  std::vector<char> capped(n_replicates, 0);
  parallel_for(n_replicates, threads, [&](std::size_t r) {
    auto res = simulate_tree(b, r);
    if (res.capped) {
      capped[r] = 1;
      return;
    }
    double s = 0.0;
    for (const auto& c : res.alive) s += f(c.x, c.age);
    sums[r] = s;
  });
  RunningStats st;
  MtEstimate out;
  for (std::size_t r = 0; r < n_replicates; ++r) {
    if (capped[r]) {
      ++out.n_capped;
      continue;
    }
    st.add(sums[r]);
  }
  if (st.count() == 0) throw EstimationError("estimate_M_t: every replicate hit the population cap");
  out.mean = st.mean();
  out.se = st.se();
  out.n_valid = st.count();
  return out;
}

struct CountSeries {
  std::vector<double> t;
  std::vector<MtEstimate> counts;
};

// Mean alive count on a time grid, one tree per replicate.
inline CountSeries estimate_counts(const ModelSpec& m, const CellState& init, const std::vector<double>& t_grid,
                                   std::size_t n_replicates, std::uint64_t seed, std::size_t cap = 1000000,
                                   unsigned threads = 0) {
  if (t_grid.empty() || !std::is_sorted(t_grid.begin(), t_grid.end()))
    throw ParameterError("estimate_counts: t_grid must be nonempty and increasing");
  ReplicateBatch b;
  b.model = &m;
  b.init = init;
  b.horizon = t_grid.back();
  b.cap = cap;
  b.master_seed = seed;
  b.observe = t_grid;
  b.record_alive = false;
  std::vector<std::vector<double>> obs(n_replicates);
  std::vector<char> capped(n_replicates, 0);
  parallel_for(n_replicates, threads, [&](std::size_t r) {
    auto res = simulate_tree(b, r);
    capped[r] = res.capped;
    obs[r] = std::move(res.observed_counts);
  });
  CountSeries out;
  out.t = t_grid;
  std::vector<RunningStats> st(t_grid.size());
  std::size_t n_capped = 0;
  for (std::size_t r = 0; r < n_replicates; ++r) {
    if (capped[r]) {
      ++n_capped;
      continue;
    }
    for (std::size_t i = 0; i < t_grid.size(); ++i) st[i].add(obs[r][i]);
  }
  if (n_capped == n_replicates) throw EstimationError("estimate_counts: every replicate hit the population cap");
  for (auto& s : st) out.counts.push_back({s.mean(), s.se(), s.count(), n_capped});
  return out;
}

struct GrowthEstimate {
  double lambda = 0.0;
  double se = 0.0;  // delta method, ignoring correlation across grid points
  double ci_lo = 0.0, ci_hi = 0.0;
  CountSeries series;
};

inline GrowthEstimate fit_growth_rate(const CountSeries& s) {
  const std::size_t n = s.t.size();
  if (n < 4) throw ParameterError("estimate_growth_rate: need at least 4 grid points");
  double tbar = 0.0, ybar = 0.0;
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(s.counts[i].mean > 0)) throw EstimationError("estimate_growth_rate: nonpositive population estimate");
    y[i] = std::log(s.counts[i].mean);
    tbar += s.t[i];
    ybar += y[i];
  }
  tbar /= static_cast<double>(n);
  ybar /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (s.t[i] - tbar) * (s.t[i] - tbar);
    sxy += (s.t[i] - tbar) * (y[i] - ybar);
  }
  GrowthEstimate g;
  g.series = s;
  g.lambda = sxy / sxx;
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double w = (s.t[i] - tbar) / sxx;
    double rel = s.counts[i].se / s.counts[i].mean;
    var += w * w * rel * rel;
  }
  g.se = std::sqrt(var);
  g.ci_lo = g.lambda - 1.96 * g.se;
  g.ci_hi = g.lambda + 1.96 * g.se;
  return g;
}

inline GrowthEstimate estimate_growth_rate(const ModelSpec& m, const CellState& init, const std::vector<double>& t_grid,
                                           std::size_t n_replicates, std::uint64_t seed, std::size_t cap = 1000000,
                                           unsigned threads = 0) {
  return fit_growth_rate(estimate_counts(m, init, t_grid, n_replicates, seed, cap, threads));
}

// ---------------------------------------------------------------- CSV

inline void write_events_csv(std::ostream& os, const std::vector<PopulationEvent>& ev, int dim) {
  os << "time,parent,kind,I,J,M\n" << std::setprecision(17);
  for (const auto& e : ev) {
    os << e.time << ',' << label_to_string(e.parent) << ',';
    if (e.kind == PopulationEvent::Kind::Division)
      os << "division," << mask_to_string(e.I, dim) << ',' << mask_to_string(e.J, dim) << ','
         << mask_to_string(e.M, dim) << '\n';
    else
      os << "senescence:" << e.daughter << ",,,\n";
  }
}

inline void write_alive_csv(std::ostream& os, const std::vector<AliveCell>& alive, int dim) {
  os << "label";
  for (int j = 1; j <= dim; ++j) os << ",x_" << j;
  os << ",age\n" << std::setprecision(17);
  for (const auto& c : alive) {
    os << label_to_string(c.label);
    for (double v : c.x) os << ',' << v;
    os << ',' << c.age << '\n';
  }
}

inline void write_estimates_csv(std::ostream& os, const CountSeries& s) {
  os << "t,mean,stderr,n_valid\n" << std::setprecision(17);
  for (std::size_t i = 0; i < s.t.size(); ++i)
    os << s.t[i] << ',' << s.counts[i].mean << ',' << s.counts[i].se << ',' << s.counts[i].n_valid << '\n';
}

}  // namespace tbp
