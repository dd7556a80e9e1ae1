#pragma once

#include <ostream>
#include <string>

#include "tbp/io/config.hpp"

namespace tbp::io {

enum ExitCode { kOk = 0, kError = 1, kCertificateFailed = 2 };

// out_root/<command>/<run id>; the id depends only on the config hash and seed.
std::string run_directory(const RunConfig& c, const std::string& out_root);

// Dispatches c.run.command, writes artifacts under run_directory(), returns the exit code.
int run_command(const RunConfig& c, const std::string& out_root, std::ostream& log);

}  // namespace tbp::io
