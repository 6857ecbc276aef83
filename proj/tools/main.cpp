#include "threebody/cli.hpp"

int main(int argc, char** argv) { return threebody::cli::run(argc, argv); }
