#pragma once

#include <iosfwd>

namespace cfsm {

// Exit codes: 0 success, 2 usage or config error, 1 runtime failure.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cfsm
