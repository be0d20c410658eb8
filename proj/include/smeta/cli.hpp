#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace smeta {

// Runs one command-line invocation. `args` holds everything after the
// program name. All human-readable progress goes to `out`; the last line
// written to `out` is always a machine-readable JSON status object
//   {"command": "<name>", "failures": [{"check": ..., "detail": ...}, ...]}
// and the return value is 0 exactly when that failure list is empty.
// Usage/parse errors go to `err` and return a nonzero code without the JSON
// status (there is no command to report on).
//
// Commands: train, prop1, prop3, theorem1, gradcheck, mtr, diag-replay.
// Shared flags: --config PATH, --seed U64, --seeds N, --out DIR,
// --override key=value (repeatable). Precedence: built-in defaults, then the
// config file, then --seed/--seeds/--out, then --override assignments in
// order. SPECTRAL_META_THREADS is validated on every invocation.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace smeta
