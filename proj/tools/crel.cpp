#include "crel/cli.hpp"

int main(int argc, char** argv) { return crel::cli::run_cli(argc, argv); }
