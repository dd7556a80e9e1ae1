#include "tbp/io/config.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <type_traits>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace tbp::io {

namespace {

std::string join(const std::vector<std::string>& v) {
  std::string s = "configuration invalid:";
  for (const auto& e : v) s += "\n  - " + e;
  return s;
}

using Section = std::map<std::string, std::string>;

const std::map<std::string, std::set<std::string>>& schema() {
  static const std::map<std::string, std::set<std::string>> s = {
      {"model",
       {"k", "delta", "Delta", "preset", "gamma", "q.kind", "q.c", "q.r", "q.ys", "q.qs", "q.tail_rate", "birth.kind",
        "birth.coeffs", "width", "selector", "B_max", "D", "eps0", "L_renew"}},
      {"run",
       {"command", "horizon", "replicates", "cap", "seed", "t_grid", "x_bins", "a_bins", "threads", "init_x",
        "init_length", "init_age", "t_burn", "dt", "offspring_mean"}},
      {"psi", {"d_psi", "lambda0", "L", "safety_margin"}},
      {"verify", {"D", "L_renew", "epsilon0_target", "samples", "points"}},
  };
  return s;
}

struct Reader {
  std::map<std::string, Section> data;
  std::vector<std::string> errs;

  const std::string* find(const std::string& sec, const std::string& key) const {
    auto s = data.find(sec);
    if (s == data.end()) return nullptr;
    auto k = s->second.find(key);
    return k == s->second.end() ? nullptr : &k->second;
  }

  void number(const std::string& sec, const std::string& key, double& out) {
    if (auto v = find(sec, key)) {
      try {
        std::size_t pos = 0;
        double d = std::stod(*v, &pos);
        if (pos != v->size() || !std::isfinite(d)) throw std::invalid_argument("");
        out = d;
      } catch (const std::exception&) {
        errs.push_back(sec + "." + key + ": expected a number, got '" + *v + "'");
      }
    }
  }
  template <class Int>
  void integer(const std::string& sec, const std::string& key, Int& out) {
    if (auto v = find(sec, key)) {
      try {
        std::size_t pos = 0;
        long long d = std::stoll(*v, &pos);
        if (pos != v->size()) throw std::invalid_argument("");
        if (std::is_unsigned_v<Int> && d < 0) throw std::out_of_range("");
        out = static_cast<Int>(d);
      } catch (const std::exception&) {
        errs.push_back(sec + "." + key + ": expected an integer, got '" + *v + "'");
      }
    }
  }
  void u64(const std::string& sec, const std::string& key, std::uint64_t& out) {
    if (auto v = find(sec, key)) {
      try {
        std::size_t pos = 0;
        out = std::stoull(*v, &pos);
        if (pos != v->size() || (!v->empty() && (*v)[0] == '-')) throw std::invalid_argument("");
      } catch (const std::exception&) {
        errs.push_back(sec + "." + key + ": expected an unsigned integer, got '" + *v + "'");
      }
    }
  }
  void list(const std::string& sec, const std::string& key, std::vector<double>& out) {
    if (auto v = find(sec, key)) {
      out.clear();
      std::stringstream ss(*v);
      std::string item;
      while (std::getline(ss, item, ',')) {
        auto b = item.find_first_not_of(" \t"), e = item.find_last_not_of(" \t");
        if (b == std::string::npos) continue;
        item = item.substr(b, e - b + 1);
        try {
          std::size_t pos = 0;
          out.push_back(std::stod(item, &pos));
          if (pos != item.size()) throw std::invalid_argument("");
        } catch (const std::exception&) {
          errs.push_back(sec + "." + key + ": bad list entry '" + item + "'");
        }
      }
    }
  }
  template <class E>
  void choice(const std::string& sec, const std::string& key, E& out, const std::map<std::string, E>& opts) {
    if (auto v = find(sec, key)) {
      auto it = opts.find(*v);
      if (it == opts.end()) {
        std::string names;
        for (const auto& [n, e] : opts) names += (names.empty() ? "" : "|") + n;
        errs.push_back(sec + "." + key + ": expected one of " + names + ", got '" + *v + "'");
      } else {
        out = it->second;
      }
    }
  }
};

const std::map<std::string, Preset> kPresets = {{"model1", Preset::Model1}, {"model2", Preset::Model2}, {"custom", Preset::Custom}};
const std::map<std::string, BirthRate::Kind> kBirth = {
    {"constant", BirthRate::Kind::Constant}, {"age_linear", BirthRate::Kind::AgeLinear}, {"custom_poly", BirthRate::Kind::Poly}};
const std::map<std::string, QFunction::Kind> kQ = {{"exp", QFunction::Kind::Exp}, {"table", QFunction::Kind::Table}};
const std::map<std::string, WidthKind> kWidth = {{"constant", WidthKind::Constant}, {"inverse_length", WidthKind::InverseLength}};
const std::map<std::string, SelectorKind> kSel = {{"all", SelectorKind::All}, {"independent", SelectorKind::Independent}};
const std::set<std::string> kCommands = {"simulate",       "estimate",           "aux-particle",    "cross-validate",
                                         "bellman-harris", "verify-assumptions", "estimate-profile"};

template <class E>
std::string name_of(const std::map<std::string, E>& m, E v) {
  for (const auto& [n, e] : m)
    if (e == v) return n;
  return "?";
}

void validate(const RunConfig& c, std::vector<std::string>& errs) {
  const auto& m = c.model;
  if (m.k < 1 || m.k > kMaxChromosomes) errs.push_back("model.k: must lie in [1," + std::to_string(kMaxChromosomes) + "]");
  if (!(m.delta > 0)) errs.push_back("model.delta: must be > 0");
  if (!(m.Delta > 0)) errs.push_back("model.Delta: must be > 0");
  if (m.delta > 0 && m.Delta > 0 && !(m.Delta > m.delta)) errs.push_back("model.Delta: must exceed model.delta");
  if (m.preset == Preset::Model1 && !(m.gamma > 0 && m.gamma < 1)) errs.push_back("model.gamma: must lie in (0,1)");
  if (m.q.kind == QFunction::Kind::Exp) {
    if (!(m.q.c > 0)) errs.push_back("model.q.c: must be > 0");
    if (!(m.q.r > 0)) errs.push_back("model.q.r: must be > 0");
  } else if (m.q.ys.size() < 2 || m.q.ys.size() != m.q.qs.size()) {
    errs.push_back("model.q.ys / model.q.qs: need >= 2 knots of equal length");
  }
  for (double v : m.birth.coeffs)
    if (!(v >= 0)) errs.push_back("model.birth.coeffs: entries must be >= 0");
  std::size_t nc = m.birth.coeffs.size();
  if (m.birth.kind == BirthRate::Kind::Constant && nc != 1) errs.push_back("model.birth.coeffs: constant takes one value");
  if (m.birth.kind == BirthRate::Kind::AgeLinear && nc != 2) errs.push_back("model.birth.coeffs: age_linear takes two values");
  if (m.birth.kind == BirthRate::Kind::Poly && nc == 0) errs.push_back("model.birth.coeffs: custom_poly needs values");
  if (m.preset == Preset::Custom) {
    if (!(m.B_max > 0)) errs.push_back("model.B_max: custom preset requires a positive value");
    if (m.D < 1) errs.push_back("model.D: must be >= 1");
  }
  const auto& r = c.run;
  if (!kCommands.count(r.command)) errs.push_back("run.command: unknown command '" + r.command + "'");
  if (!(r.horizon >= 0)) errs.push_back("run.horizon: must be >= 0");
  if (r.replicates < 1) errs.push_back("run.replicates: must be >= 1");
  if (r.cap < 1) errs.push_back("run.cap: must be >= 1");
  for (std::size_t i = 1; i < r.t_grid.size(); ++i)
    if (!(r.t_grid[i] > r.t_grid[i - 1])) {
      errs.push_back("run.t_grid: must be increasing");
      break;
    }
  if (r.x_bins < 1) errs.push_back("run.x_bins: must be >= 1");
  if (r.a_bins < 1) errs.push_back("run.a_bins: must be >= 1");
  if (!r.init_x.empty() && static_cast<int>(r.init_x.size()) != 2 * m.k)
    errs.push_back("run.init_x: must list 2k values");
  for (double v : r.init_x)
    if (!(v >= 0)) errs.push_back("run.init_x: entries must be >= 0");
  if (!(r.init_length >= 0)) errs.push_back("run.init_length: must be >= 0");
  if (!(r.init_age >= 0)) errs.push_back("run.init_age: must be >= 0");
  if (!(r.dt > 0)) errs.push_back("run.dt: must be > 0");
  if (!(r.offspring_mean > 1)) errs.push_back("run.offspring_mean: must exceed 1");
  if (c.psi.d_psi < 0) errs.push_back("psi.d_psi: must be >= 0");
  if (!(c.psi.lambda0 >= 0)) errs.push_back("psi.lambda0: must be >= 0");
  if (c.psi.L < 0) errs.push_back("psi.L: must be >= 0");
  if (!(c.psi.safety_margin >= 0)) errs.push_back("psi.safety_margin: must be >= 0");
  if (c.verify.D < 0) errs.push_back("verify.D: must be >= 0");
  if (!(c.verify.L_renew >= 0)) errs.push_back("verify.L_renew: must be >= 0");
  if (c.verify.samples < 1) errs.push_back("verify.samples: must be >= 1");
  if (c.verify.points < 1) errs.push_back("verify.points: must be >= 1");
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}
std::string fmt(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt(v[i]);
  return s;
}

}  // namespace

SchemaError::SchemaError(std::vector<std::string> v) : ConfigurationError(join(v)), violations(std::move(v)) {}

RunConfig parse_config_string(const std::string& text) {
  boost::property_tree::ptree pt;
  std::istringstream is(text);
  try {
    boost::property_tree::ini_parser::read_ini(is, pt);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw SchemaError({std::string("syntax: ") + e.what()});
  }
  Reader rd;
  for (const auto& [sec, child] : pt) {
    auto sch = schema().find(sec);
    if (sch == schema().end()) {
      rd.errs.push_back("unknown section [" + sec + "]");
      continue;
    }
    if (!child.data().empty()) rd.errs.push_back("key '" + sec + "' outside any section");
    for (const auto& [key, val] : child) {
      if (!sch->second.count(key)) rd.errs.push_back(sec + "." + key + ": unknown key");
      else rd.data[sec][key] = val.data();
    }
  }

  RunConfig c;
  auto& m = c.model;
  rd.integer("model", "k", m.k);
  rd.number("model", "delta", m.delta);
  rd.number("model", "Delta", m.Delta);
  rd.choice("model", "preset", m.preset, kPresets);
  rd.number("model", "gamma", m.gamma);
  rd.choice("model", "q.kind", m.q.kind, kQ);
  rd.number("model", "q.c", m.q.c);
  rd.number("model", "q.r", m.q.r);
  rd.list("model", "q.ys", m.q.ys);
  rd.list("model", "q.qs", m.q.qs);
  rd.number("model", "q.tail_rate", m.q.tail_rate);
  rd.choice("model", "birth.kind", m.birth.kind, kBirth);
  if (rd.find("model", "birth.kind") && !rd.find("model", "birth.coeffs")) {
    if (m.birth.kind == BirthRate::Kind::Constant) m.birth.coeffs = {1.0};
  }
  rd.list("model", "birth.coeffs", m.birth.coeffs);
  rd.choice("model", "width", m.width, kWidth);
  rd.choice("model", "selector", m.selector, kSel);
  rd.number("model", "B_max", m.B_max);
  rd.integer("model", "D", m.D);
  rd.number("model", "eps0", m.eps0);
  rd.number("model", "L_renew", m.L_renew);

  auto& r = c.run;
  if (auto v = rd.find("run", "command")) r.command = *v;
  rd.number("run", "horizon", r.horizon);
  rd.integer("run", "replicates", r.replicates);
  rd.integer("run", "cap", r.cap);
  rd.u64("run", "seed", r.seed);
  rd.list("run", "t_grid", r.t_grid);
  rd.integer("run", "x_bins", r.x_bins);
  rd.integer("run", "a_bins", r.a_bins);
  rd.integer("run", "threads", r.threads);
  rd.list("run", "init_x", r.init_x);
  rd.number("run", "init_length", r.init_length);
  rd.number("run", "init_age", r.init_age);
  rd.number("run", "t_burn", r.t_burn);
  rd.number("run", "dt", r.dt);
  rd.number("run", "offspring_mean", r.offspring_mean);

  rd.integer("psi", "d_psi", c.psi.d_psi);
  rd.number("psi", "lambda0", c.psi.lambda0);
  rd.integer("psi", "L", c.psi.L);
  rd.number("psi", "safety_margin", c.psi.safety_margin);

  rd.integer("verify", "D", c.verify.D);
  rd.number("verify", "L_renew", c.verify.L_renew);
  rd.number("verify", "epsilon0_target", c.verify.epsilon0_target);
  rd.integer("verify", "samples", c.verify.samples);
  rd.integer("verify", "points", c.verify.points);

  validate(c, rd.errs);
  if (!rd.errs.empty()) throw SchemaError(rd.errs);
  return c;
}

RunConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigurationError("cannot read configuration file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_string(ss.str());
}

std::string model_to_ini(const ModelParams& m) {
  std::ostringstream os;
  os << "[model]\n";
  os << "k = " << m.k << "\n";
  os << "delta = " << fmt(m.delta) << "\n";
  os << "Delta = " << fmt(m.Delta) << "\n";
  os << "preset = " << name_of(kPresets, m.preset) << "\n";
  os << "gamma = " << fmt(m.gamma) << "\n";
  os << "q.kind = " << name_of(kQ, m.q.kind) << "\n";
  os << "q.c = " << fmt(m.q.c) << "\n";
  os << "q.r = " << fmt(m.q.r) << "\n";
  if (!m.q.ys.empty()) os << "q.ys = " << fmt(m.q.ys) << "\n";
  if (!m.q.qs.empty()) os << "q.qs = " << fmt(m.q.qs) << "\n";
  os << "q.tail_rate = " << fmt(m.q.tail_rate) << "\n";
  os << "birth.kind = " << name_of(kBirth, m.birth.kind) << "\n";
  os << "birth.coeffs = " << fmt(m.birth.coeffs) << "\n";
  os << "width = " << name_of(kWidth, m.width) << "\n";
  os << "selector = " << name_of(kSel, m.selector) << "\n";
  os << "B_max = " << fmt(m.B_max) << "\n";
  os << "D = " << m.D << "\n";
  os << "eps0 = " << fmt(m.eps0) << "\n";
  os << "L_renew = " << fmt(m.L_renew) << "\n";
  return os.str();
}

std::string to_ini(const RunConfig& c) {
  std::ostringstream os;
  os << model_to_ini(c.model) << "\n[run]\n";
  const auto& r = c.run;
  os << "command = " << r.command << "\n";
  os << "horizon = " << fmt(r.horizon) << "\n";
  os << "replicates = " << r.replicates << "\n";
  os << "cap = " << r.cap << "\n";
  os << "seed = " << r.seed << "\n";
  if (!r.t_grid.empty()) os << "t_grid = " << fmt(r.t_grid) << "\n";
  os << "x_bins = " << r.x_bins << "\n";
  os << "a_bins = " << r.a_bins << "\n";
  os << "threads = " << r.threads << "\n";
  if (!r.init_x.empty()) os << "init_x = " << fmt(r.init_x) << "\n";
  os << "init_length = " << fmt(r.init_length) << "\n";
  os << "init_age = " << fmt(r.init_age) << "\n";
  os << "t_burn = " << fmt(r.t_burn) << "\n";
  os << "dt = " << fmt(r.dt) << "\n";
  os << "offspring_mean = " << fmt(r.offspring_mean) << "\n";
  os << "\n[psi]\n";
  os << "d_psi = " << c.psi.d_psi << "\n";
  os << "lambda0 = " << fmt(c.psi.lambda0) << "\n";
  os << "L = " << c.psi.L << "\n";
  os << "safety_margin = " << fmt(c.psi.safety_margin) << "\n";
  os << "\n[verify]\n";
  os << "D = " << c.verify.D << "\n";
  os << "L_renew = " << fmt(c.verify.L_renew) << "\n";
  os << "epsilon0_target = " << fmt(c.verify.epsilon0_target) << "\n";
  os << "samples = " << c.verify.samples << "\n";
  os << "points = " << c.verify.points << "\n";
  return os.str();
}

std::uint64_t config_hash(const RunConfig& c) {
  RunConfig copy = c;
  copy.run.threads = 0;  // parallelism does not change results
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_ini(copy)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace tbp::io
