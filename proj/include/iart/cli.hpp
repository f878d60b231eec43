#ifndef IART_CLI_HPP
#define IART_CLI_HPP

#include <iostream>

namespace iart {

/// Entry point of the `iart` executable. Failures print one JSON line
/// `{"error":{"kind":...,"message":...}}` to `err` and return nonzero.
int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr);

}  // namespace iart

#endif  // IART_CLI_HPP
