#include "trm/cli/cli.hpp"

int main(int argc, char** argv) { return trm::cli::main(argc, argv); }
