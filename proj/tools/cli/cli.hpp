#pragma once

#include <string>
#include <vector>

namespace curvlink {

// Runs one subcommand; args excludes the program name. Returns 0 on success,
// 1 on validation errors and 2 on numeric failures. Every run that gets past
// config validation leaves manifest.json in output_dir/run_id.
int cli_run(const std::vector<std::string>& args);

}  // namespace curvlink
