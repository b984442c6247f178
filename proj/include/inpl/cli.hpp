#pragma once

#include "inpl/train.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace inpl::cli {

/// Exit codes.
enum Exit : int { ok = 0, usage = 1, data_error = 2, numerical_abort = 3 };

/// Entry point: subcommands homophily, gen-synth, train, eval, env-report,
/// bias-split. Diagnostics go to `err`, machine-readable output to files or
/// to `out` when the output path is "-".
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

/// Flat JSON object whose keys mirror TrainConfig fields. Unknown keys and
/// invalid values throw InputError; missing keys keep their defaults.
TrainConfig load_config(const std::filesystem::path& path);
TrainConfig parse_config(const std::string& text, const std::string& source = "<config>");

}  // namespace inpl::cli
