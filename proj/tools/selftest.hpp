#pragma once

namespace rflab_cli {

/// Fast invariant suite; prints one line per check and returns the number
/// of failures.
int run_selftest();

}  // namespace rflab_cli
