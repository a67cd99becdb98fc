#include "multipar/cli.hpp"

int main(int argc, char** argv) { return multipar::cli::run(argc, argv); }
