#include "rffi/cli.hpp"

int main(int argc, char** argv) { return rffi::cli::run_cli(argc, argv); }
