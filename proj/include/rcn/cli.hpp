#pragma once

namespace rcn {

/// Exit codes: 0 success, 1 usage, 2 validation, 3 numerical failure.
int run_cli(int argc, char** argv);

}  // namespace rcn
