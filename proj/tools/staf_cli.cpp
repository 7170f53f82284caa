#include "staf/cli.hpp"

int main(int argc, char** argv) { return staf::cli_run(argc, argv); }
