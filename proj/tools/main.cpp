#include "commands.hpp"

int main(int argc, char** argv) { return defence::cli::run_cli(argc, argv); }
