#include "fisherjscc/cli.hpp"

int main(int argc, char** argv) { return fisherjscc::cli::run(argc, argv); }
