#include "ccsd/cli.hpp"

int main(int argc, char** argv) { return ccsd::cli_main(argc, argv); }
