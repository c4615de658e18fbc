#include "agerank/cli.hpp"

int main(int argc, char** argv) { return agerank::cli::run(argc, argv); }
