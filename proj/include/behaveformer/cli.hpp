#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace bf {

/// Entry point behind the `behave` binary. `args` excludes the program name.
/// Returns the process exit code; errors are reported on `err` with the
/// originating module in the message.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace bf
