#include "vectn/cli.hpp"

int main(int argc, char** argv) { return vectn::cli::main(argc, argv); }
