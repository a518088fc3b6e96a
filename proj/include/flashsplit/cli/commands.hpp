#pragma once

namespace flashsplit {

// Full command-line front end. Returns the process exit code: 0 success,
// 2 configuration problem, 3 missing or untrained artifact, 4 linear vs
// tonemapped mode mismatch, 1 anything else.
int run_cli(int argc, char** argv);

} // namespace flashsplit
