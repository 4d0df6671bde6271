#include "pmflq/cli.hpp"

int main(int argc, char** argv) { return pmflq::cli::run(argc, argv); }
