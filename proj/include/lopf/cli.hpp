#pragma once

#include <iosfwd>

namespace lopf::cli {

// Entry point of the `lopf` tool. Returns the process exit status; failures
// print one line "error kind=<token> message=<text>" to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace lopf::cli
