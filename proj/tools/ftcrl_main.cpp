#include "ftcrl/harness.hpp"

int main(int argc, char** argv) { return ftcrl::harness::cli_main(argc, argv); }
