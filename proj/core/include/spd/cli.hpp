#pragma once

#include <string>
#include <vector>

namespace spd::cli {

// Entry point behind the `spd` binary. Returns 0 on success, 1 on user
// error (bad arguments, invalid data, unreadable files), 2 on internal
// error. Subcommands: gen-toy, validate, stats, split, train-stage1,
// train-stage2, train-joint, eval, cka, parse-asm.
int run(const std::vector<std::string>& args);
int run(int argc, char** argv);

}  // namespace spd::cli
