#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace fsc::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitGuidance = 3;

/// Runs one `fsc` invocation. args excludes the program name. Never throws;
/// every failure becomes a message on err and a non-zero exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fsc::cli
