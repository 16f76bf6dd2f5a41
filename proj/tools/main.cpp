#include "cadlab/cli/commands.hpp"

int main(int argc, char** argv) { return cadlab::cli::run_cli(argc, argv); }
