#include "patchlens/cli.hpp"

int main(int argc, char** argv) { return patchlens::cli::run(argc, argv); }
