#include "mtcl/cli.hpp"

int main(int argc, char** argv) { return mtcl::run_cli(argc, argv); }
