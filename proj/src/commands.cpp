#include "tbp/io/commands.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <json.hpp>

#include "tbp/lyapunov.hpp"
#include "tbp/model.hpp"
#include "tbp/particle.hpp"
#include "tbp/population.hpp"
#include "tbp/profile.hpp"
#include "tbp/renewal.hpp"

namespace tbp::io {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw ConfigurationError("cannot write " + p.string());
  os << s;
}

template <class F>
void write_with(const fs::path& p, F&& f) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw ConfigurationError("cannot write " + p.string());
  f(os);
}

json estimate_json(const Estimate& e) { return {{"mean", e.mean}, {"se", e.se}, {"n", e.n}}; }

// JSON has no infinity; large quantities are reported by their logarithm alongside.
json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

struct Context {
  const RunConfig& c;
  ModelSpec m;
  fs::path dir;
  std::ostream& log;
  unsigned threads;
  json report;
};

CellState initial_cell(const RunConfig& c, const ModelSpec& m) {
  TelomereVector x = c.run.init_x;
  if (x.empty()) x.assign(static_cast<std::size_t>(m.dim()), c.run.init_length);
  if (static_cast<int>(x.size()) != m.dim())
    throw ParameterError("run.init_x: expected " + std::to_string(m.dim()) + " coordinates");
  if (!valid_trait(x)) throw ParameterError("run.init_x: coordinates must be finite and >= 0");
  return CellState::alive(std::move(x), c.run.init_age);
}

std::vector<double> time_grid(const RunConfig& c, double from) {
  if (!c.run.t_grid.empty()) return c.run.t_grid;
  std::vector<double> g;
  for (int i = 1; i <= 10; ++i) g.push_back(from + (c.run.horizon - from) * i / 10.0);
  return g;
}

double effective_eps0(const RunConfig& c, const ModelSpec& m) {
  return c.verify.epsilon0_target >= 0 ? c.verify.epsilon0_target : m.eps0;
}
int effective_D(const RunConfig& c, const ModelSpec& m) { return c.verify.D > 0 ? c.verify.D : m.D; }

json lyapunov_json(const LyapunovFunction& V) {
  return {{"lambda0", V.lambda0},
          {"L", V.L},
          {"eps1", V.eps1},
          {"Lambda", V.Lambda.value},
          {"Lambda_method", V.Lambda.method},
          {"V_min", V.V_min},
          {"C_V", finite_or_null(V.C_V)},
          {"log_C_V", 2.0 * V.k * V.lambda0 * std::max(V.delta, V.Delta)}};
}

LyapunovFunction make_lyapunov(Context& ctx) {
  const auto& ps = ctx.c.psi;
  if (ps.lambda0 > 0 && ps.L > 0) return lyapunov_build(ctx.m, ps.lambda0, ps.L);
  const double target = std::pow(1.0 + effective_eps0(ctx.c, ctx.m), 1.0 / effective_D(ctx.c, ctx.m));
  auto ch = search_lyapunov_parameters(ctx.m, target);
  if (!ch.found) throw EstimationError("psi: no (lambda0, L) reaches the target " + std::to_string(target));
  return lyapunov_build(ctx.m, ps.lambda0 > 0 ? ps.lambda0 : ch.lambda0, ps.L > 0 ? ps.L : ch.L);
}

PsiWeight make_psi(Context& ctx) {
  auto V = make_lyapunov(ctx);
  auto lp = compute_lambda_psi(ctx.m, V, ctx.c.psi.d_psi, ctx.c.psi.safety_margin);
  ctx.report["lyapunov"] = lyapunov_json(V);
  ctx.report["psi"] = {{"d_psi", ctx.c.psi.d_psi},
                       {"lambda_psi", lp.value},
                       {"lower_bound", lp.analytic},
                       {"C_psi", lp.C_psi},
                       {"C_prime", lp.C_prime}};
  return PsiWeight{ctx.c.psi.d_psi, V, lp.value};
}

// ---------------------------------------------------------------- commands

int cmd_simulate(Context& ctx) {
  auto init = initial_cell(ctx.c, ctx.m);
  auto res = simulate_tree(ctx.m, init, ctx.c.run.horizon, ctx.c.run.cap, ctx.c.run.seed, 0, true);
  write_with(ctx.dir / "events.csv", [&](std::ostream& os) { write_events_csv(os, res.events, ctx.m.dim()); });
  write_with(ctx.dir / "alive.csv", [&](std::ostream& os) { write_alive_csv(os, res.alive, ctx.m.dim()); });
  ctx.report["alive"] = res.alive.size();
  ctx.report["divisions"] = res.divisions;
  ctx.report["senescent_daughters"] = res.senescent_daughters;
  ctx.report["created"] = res.created;
  ctx.report["capped"] = res.capped;
  ctx.report["accounting_holds"] = res.accounting_holds();
  return kOk;
}

int cmd_estimate(Context& ctx) {
  auto grid = time_grid(ctx.c, 0.0);
  auto s = estimate_counts(ctx.m, initial_cell(ctx.c, ctx.m), grid, ctx.c.run.replicates, ctx.c.run.seed,
                           ctx.c.run.cap, ctx.threads);
  write_with(ctx.dir / "estimates.csv", [&](std::ostream& os) { write_estimates_csv(os, s); });
  ctx.report["replicates"] = ctx.c.run.replicates;
  ctx.report["capped"] = s.counts.front().n_capped;
  if (grid.size() >= 4) {
    auto g = fit_growth_rate(s);
    ctx.report["growth_rate"] = {{"lambda", g.lambda}, {"se", g.se}, {"ci95", {g.ci_lo, g.ci_hi}}};
  }
  return kOk;
}

int cmd_aux_particle(Context& ctx) {
  auto psi = make_psi(ctx);
  auto init = initial_cell(ctx.c, ctx.m);
  std::vector<ParticlePath> paths(ctx.c.run.replicates);
  parallel_for(paths.size(), ctx.threads, [&](std::size_t i) {
    paths[i] = simulate_particle(ctx.m, psi, init.x, init.age, ctx.c.run.horizon, Stream::from(ctx.c.run.seed, i, 0xA11));
  });
  write_with(ctx.dir / "paths.csv", [&](std::ostream& os) { write_paths_csv(os, paths, ctx.m.dim()); });
  std::size_t absorbed = 0, clipped = 0, jumps = 0;
  for (const auto& p : paths) {
    absorbed += p.absorbed;
    clipped += p.clipped;
    jumps += p.jumps() - (p.absorbed ? 1 : 0);
  }
  auto grid = time_grid(ctx.c, 0.0);
  ctx.report["paths"] = paths.size();
  ctx.report["absorbed"] = absorbed;
  ctx.report["mean_jumps"] = paths.empty() ? 0.0 : static_cast<double>(jumps) / static_cast<double>(paths.size());
  ctx.report["clipped_decisions"] = clipped;
  ctx.report["tail_T_all"] = {{"t", grid}, {"prob", tail_T_all(paths, grid)}};
  return kOk;
}

int cmd_cross_validate(Context& ctx) {
  auto psi = make_psi(ctx);
  auto init = initial_cell(ctx.c, ctx.m);
  auto cv = cross_validate_semigroup(ctx.m, psi, init.x, init.age, [](const TelomereVector&, double) { return 1.0; },
                                     ctx.c.run.horizon, ctx.c.run.replicates, ctx.c.run.seed, ctx.threads);
  ctx.report["test_function"] = "one";
  ctx.report["t"] = ctx.c.run.horizon;
  ctx.report["particle"] = estimate_json(cv.lhs);
  ctx.report["branching"] = estimate_json(cv.rhs);
  ctx.report["z"] = cv.z;
  ctx.report["clipped_decisions"] = cv.clipped;
  ctx.report["pass"] = cv.pass();
  return cv.pass() ? kOk : kCertificateFailed;
}

int cmd_bellman_harris(Context& ctx) {
  auto law = LifetimeLaw::from_birth(ctx.m.birth);
  const double gamma = ctx.c.run.offspring_mean;
  auto g = law.render(ctx.c.run.dt, ctx.c.run.horizon);
  auto mean = bh_mean(g, gamma);
  write_with(ctx.dir / "bh_mean.csv", [&](std::ostream& os) {
    os << "t,mean\n" << std::setprecision(17);
    for (std::size_t i = 0; i < mean.size(); ++i) os << g.t(i) << ',' << mean[i] << '\n';
  });
  write_with(ctx.dir / "density.csv", [&](std::ostream& os) {
    os << "t,density\n" << std::setprecision(17);
    for (std::size_t i = 0; i < g.size(); ++i) os << g.t(i) << ',' << g.f[i] << '\n';
  });
  ctx.report["offspring_mean"] = gamma;
  ctx.report["dt"] = ctx.c.run.dt;
  ctx.report["mass_deficit"] = g.mass_deficit;
  if (gamma > 1) ctx.report["malthusian_alpha"] = malthusian_root(law, gamma);
  return kOk;
}

int cmd_verify(Context& ctx) {
  const auto& v = ctx.c.verify;
  const int D = effective_D(ctx.c, ctx.m);
  const double L_renew = v.L_renew > 0 ? v.L_renew : ctx.m.L_renew;
  const double eps0 = effective_eps0(ctx.c, ctx.m);
  bool ok = true;

  auto pts = default_renewal_points(ctx.m, L_renew, v.points, Stream::from(ctx.c.run.seed, 0, 0x9E7));
  auto cert = verify_S21(ctx.m, D, L_renew, ctx.m.B_max, pts, 1.0 + eps0, v.samples, ctx.c.run.seed, ctx.threads);
  json rows = json::array();
  for (const auto& p : cert.points)
    rows.push_back({{"x", p.x}, {"estimate", estimate_json(p.estimate)}, {"margin", p.margin}, {"pass", p.pass}});
  ctx.report["renewal"] = {{"D", D},
                           {"B_max", ctx.m.B_max},
                           {"L_renew", L_renew},
                           {"target", cert.target},
                           {"analytic_bound", cert.analytic_bound},
                           {"points", rows},
                           {"pass", cert.pass()}};
  ok = ok && cert.pass();

  const double target = std::pow(1.0 + eps0, 1.0 / D);
  auto ch = search_lyapunov_parameters(ctx.m, target);
  json lyap = {{"target", target}, {"found", ch.found}};
  if (ch.found) {
    auto V = lyapunov_build(ctx.m, ch.lambda0, ch.L);
    lyap.update(lyapunov_json(V));
    auto xs = default_S22_points(ctx.m, V, v.points, Stream::from(ctx.c.run.seed, 0, 0x522));
    auto s22 = check_S22(ctx.m, V, xs, v.samples, ctx.c.run.seed, -1.0, ctx.threads);
    json srows = json::array();
    for (const auto& r : s22.rows)
      srows.push_back({{"x", r.x},
                       {"log_V", r.log_V},
                       {"exit_mass", estimate_json(r.exit_mass)},
                       {"pass_exit", r.pass_i},
                       {"pass_given_I", r.pass_ii}});
    lyap["drift"] = {{"bound_factor", s22.bound_factor},
                     {"points", srows},
                     {"V_min_holds", s22.pass_iii},
                     {"C_V_holds", s22.pass_iv},
                     {"pass", s22.pass()}};
    ok = ok && s22.pass();

    auto cor = check_corollaries(ctx.m, ch.lambda0, ch.L, eps0, D);
    json crit = json::array();
    for (const auto& c : cor.criteria)
      crit.push_back({{"name", c.name},
                      {"value", finite_or_null(c.value)},
                      {"bound", c.bound},
                      {"applicable", c.applicable},
                      {"pass", c.pass},
                      {"note", c.note}});
    ctx.report["criteria"] = crit;
    ctx.report["routes"] = cor.routes;
    ok = ok && cor.certified();

    try {
      double alpha = solve_alpha(ctx.m, eps0, D);
      double beta = solve_beta(ctx.m, V.eps1);
      auto ord = check_order(ctx.m, alpha, beta);
      ctx.report["order"] = {{"alpha", alpha},
                             {"beta", beta},
                             {"beta_below_alpha", ord.beta_below_alpha},
                             {"t", ord.t_used},
                             {"inf_integral", ord.inf_integral},
                             {"analytic_bound", ord.analytic_bound},
                             {"pass", ord.pass()}};
      ok = ok && ord.pass();
    } catch (const std::exception& e) {
      ctx.report["order"] = {{"error", e.what()}, {"pass", false}};
      ok = false;
    }
  } else {
    ok = false;
  }
  ctx.report["lyapunov"] = lyap;
  ctx.report["certificate"] = ok ? "PASS" : "FAIL";
  ctx.log << "certificate " << (ok ? "PASS" : "FAIL") << '\n';
  return ok ? kOk : kCertificateFailed;
}

int cmd_profile(Context& ctx) {
  const auto& r = ctx.c.run;
  auto init = initial_cell(ctx.c, ctx.m);
  BinSpec bins;
  bins.x_bins = r.x_bins;
  bins.a_bins = r.a_bins;
  auto h = estimate_stationary(ctx.m, init, r.t_burn, r.horizon, r.replicates, bins, r.cap, r.seed, ctx.threads);
  auto grid = time_grid(ctx.c, r.t_burn);
  auto g = estimate_growth_rate(ctx.m, init, grid, r.replicates, hash_combine(r.seed, 0x6A), r.cap, ctx.threads);
  h.lambda_hat = g.lambda;
  auto pf = check_product_form(h, ctx.m, g.lambda);
  write_with(ctx.dir / "histogram.csv", [&](std::ostream& os) { write_histogram_csv(os, h); });
  write_with(ctx.dir / "ks.csv", [&](std::ostream& os) { write_ks_csv(os, pf); });
  ctx.report["samples"] = h.samples;
  ctx.report["lambda_hat"] = {{"value", g.lambda}, {"se", g.se}};
  ctx.report["max_ks"] = pf.max_ks();
  ctx.report["bins_tested"] = pf.bins.size();
  ctx.report["notices"] = pf.notices;
  if (h.dim() <= 4) ctx.report["factorization_tv"] = marginal_factorization_report(h);
  return kOk;
}

const std::map<std::string, std::function<int(Context&)>>& dispatch() {
  static const std::map<std::string, std::function<int(Context&)>> d = {
      {"simulate", cmd_simulate},
      {"estimate", cmd_estimate},
      {"aux-particle", cmd_aux_particle},
      {"cross-validate", cmd_cross_validate},
      {"bellman-harris", cmd_bellman_harris},
      {"verify-assumptions", cmd_verify},
      {"estimate-profile", cmd_profile},
  };
  return d;
}

}  // namespace

std::string run_directory(const RunConfig& c, const std::string& out_root) {
  return (fs::path(out_root) / c.run.command / hex(hash_combine(config_hash(c), c.run.seed))).string();
}

int run_command(const RunConfig& c, const std::string& out_root, std::ostream& log) {
  const auto it = dispatch().find(c.run.command);
  if (it == dispatch().end()) {
    log << "error: unknown command " << c.run.command << '\n';
    return kError;
  }
  try {
    Context ctx{c, build_model(c.model), fs::path(run_directory(c, out_root)), log, c.run.threads, json::object()};
    fs::create_directories(ctx.dir);
    RunConfig canonical = c;
    canonical.run.threads = 0;  // results do not depend on it
    json manifest = {{"command", c.run.command},
                     {"config_hash", hex(config_hash(c))},
                     {"seed", c.run.seed},
                     {"config", to_ini(canonical)}};
    write_text(ctx.dir / "manifest.json", manifest.dump(2) + "\n");
    ctx.report["command"] = c.run.command;
    ctx.report["model"] = preset_name(ctx.m.params.preset);
    int code = it->second(ctx);
    ctx.report["exit_code"] = code;
    write_text(ctx.dir / "report.json", ctx.report.dump(2) + "\n");
    log << c.run.command << ": wrote " << ctx.dir.string() << '\n';
    return code;
  } catch (const std::exception& e) {
    log << "error: " << c.run.command << ": " << e.what() << '\n';
    return kError;
  }
}

}  // namespace tbp::io
