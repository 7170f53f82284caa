#pragma once

namespace staf {

// Exit codes: 0 success, 1 usage error, 2 validation/file error, 3 numeric
// failure (non-finite values or a failed gradient suite).
int cli_run(int argc, char** argv);

}  // namespace staf
