#include "fedcoal_cli.hpp"

int main(int argc, char** argv) { return fedcoal::cli::main(argc, argv); }
