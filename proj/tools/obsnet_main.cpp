#include "obsnet/cli.hpp"

int main(int argc, char** argv) { return obsnet::cli::run(argc, argv); }
