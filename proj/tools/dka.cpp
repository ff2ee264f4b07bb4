#include "cli.hpp"

int main(int argc, char** argv) { return dka::cli::run(argc, argv); }
