#pragma once

namespace phonssm {

/// Entry point behind the phonssm binary. Returns the process exit code:
/// 0 success, 1 validation failure, 2 bad arguments.
int run_cli(int argc, const char* const* argv);

}  // namespace phonssm
