#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace trm::cli {

inline constexpr int kOk = 0;
inline constexpr int kVerificationFailure = 1;
inline constexpr int kUsageError = 2;

/// Runs one subcommand (simulate, tokenize, train, scaling-sweep,
/// verify-appendix). `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int main(int argc, char** argv);

}  // namespace trm::cli
