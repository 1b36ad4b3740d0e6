#include "lrstereo/cli.hpp"

int main(int argc, char** argv) { return lrstereo::cli::run(argc, argv); }
