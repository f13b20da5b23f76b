#pragma once

#include <string>
#include <vector>

namespace fedn {

// Full command-line surface (gen-data / train / detect / score / ablate /
// plot). args excludes the program name. Returns the process exit status;
// errors print a one-line diagnostic to stderr and return nonzero.
int run_cli(const std::vector<std::string>& args);

}  // namespace fedn
