#include "reduction/cli.hpp"

int main(int argc, char** argv) { return reduction::cli::run(argc, argv); }
