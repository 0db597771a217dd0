#pragma once

#include <ostream>

namespace qprobe {

/// Entry point of the qprobe command. Exit codes: 0 ok, 1 runtime error,
/// 2 usage error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace qprobe
