#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace advecg {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitFormat = 3;
inline constexpr int kExitNumerical = 4;

// Runs one advecg command line. `env` holds NAME=value entries; ADVECG_* names override config keys.
int run_cli(const std::vector<std::string>& args, const std::vector<std::string>& env, std::ostream& out,
            std::ostream& err);

}  // namespace advecg
