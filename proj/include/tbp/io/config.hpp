#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tbp/errors.hpp"
#include "tbp/model.hpp"

namespace tbp::io {

// Every schema violation found in one pass.
struct SchemaError : ConfigurationError {
  std::vector<std::string> violations;
  explicit SchemaError(std::vector<std::string> v);
};

struct RunSection {
  std::string command = "simulate";
  double horizon = 5.0;
  std::size_t replicates = 1000;
  std::size_t cap = 1000000;
  std::uint64_t seed = 1;
  std::vector<double> t_grid;
  int x_bins = 32;
  int a_bins = 64;
  unsigned threads = 0;
  std::vector<double> init_x;  // empty: every coordinate set to init_length
  double init_length = 50.0;
  double init_age = 0.0;
  double t_burn = 0.0;
  double dt = 1e-3;
  double offspring_mean = 2.0;
};

struct PsiSection {
  int d_psi = 1;
  double lambda0 = 0.0;  // 0: searched
  int L = 0;             // 0: searched
  double safety_margin = 0.1;
};

struct VerifySection {
  int D = 0;                      // 0: model default
  double L_renew = 0.0;           // 0: model default
  double epsilon0_target = -1.0;  // < 0: model default
  std::size_t samples = 100000;
  int points = 10;
};

struct RunConfig {
  ModelParams model;
  RunSection run;
  PsiSection psi;
  VerifySection verify;
};

RunConfig parse_config_string(const std::string& text);
RunConfig parse_config(const std::string& path);
std::string to_ini(const RunConfig& c);
std::string model_to_ini(const ModelParams& m);

// FNV-1a of the canonical serialisation.
std::uint64_t config_hash(const RunConfig& c);

}  // namespace tbp::io
