#include "inpl/cli.hpp"

int main(int argc, char** argv) { return inpl::cli::run(argc, argv); }
