#include "lbgf/cli.hpp"

int main(int argc, char** argv) { return lbgf::cli::run(argc, argv); }
