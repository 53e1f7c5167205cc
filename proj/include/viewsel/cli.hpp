#pragma once

namespace viewsel::cli {

/// Exit codes: 0 success, 1 validation or configuration error, 2 runtime failure.
int run(int argc, char** argv);

}  // namespace viewsel::cli
