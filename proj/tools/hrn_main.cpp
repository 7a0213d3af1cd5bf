#include "hrn/cli.hpp"

int main(int argc, char** argv) { return hrn::cli::run_cli(argc, argv); }
