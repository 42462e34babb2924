#include "covtrack/cli.hpp"

int main(int argc, char** argv) { return covtrack::cli::run(argc, argv); }
