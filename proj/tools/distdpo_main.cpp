#include "distdpo/cli_io.hpp"

int main(int argc, char** argv) { return distdpo::run_cli(argc, argv); }
