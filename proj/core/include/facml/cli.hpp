#pragma once

namespace facml {

// Entry point behind the facml binary; returns the process exit code
// (0 success, 1 verification failure, 2 usage error, 3 data error).
int run_cli(int argc, const char* const* argv);

}  // namespace facml
