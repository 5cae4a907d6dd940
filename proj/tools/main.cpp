#include "spd/cli.hpp"

int main(int argc, char** argv) { return spd::cli::run(argc, argv); }
