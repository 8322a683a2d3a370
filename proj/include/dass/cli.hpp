#pragma once

// CLI entry point. Exit codes: 0 success, 2 usage error (unknown flags or
// subcommands, missing config file), 1 runtime failure with a JSON error
// object on stderr.

namespace dass {

int cli_main(int argc, const char* const* argv);

}  // namespace dass
