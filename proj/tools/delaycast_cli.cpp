#include "delaycast/cli.hpp"

int main(int argc, char** argv) { return delaycast::cli::run_cli(argc, argv); }
