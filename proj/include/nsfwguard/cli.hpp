#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace nsfwguard {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitIo = 2;
inline constexpr int kExitUsage = 64;

/// `nsfwguard <datagen|train|attack|bench|serve|check> [options]`. `args`
/// excludes the program name.
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace nsfwguard
