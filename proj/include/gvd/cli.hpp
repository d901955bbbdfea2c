#pragma once

#include <iosfwd>

namespace gvd {

// Exit codes: 0 success, 1 usage or configuration error, 2 data error,
// 3 a check that ran but failed (gradcheck above threshold).
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace gvd
