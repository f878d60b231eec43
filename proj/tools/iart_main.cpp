#include "iart/cli.hpp"

int main(int argc, char** argv) { return iart::run_cli(argc, argv); }
