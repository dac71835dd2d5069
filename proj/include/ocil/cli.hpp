#pragma once

#include <ostream>

namespace ocil {

// Subcommands: run, gen-synth, report, validate-config.
// Exit codes: 0 success, 1 configuration error, 2 data error, 3 runtime
// failure. Errors print one stderr line:
//   opencil: error: <config|data|runtime>: <code>: <message>
int cli_main(int argc, char** argv);
int cli_main(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace ocil
