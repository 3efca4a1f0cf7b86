#include "infosculpt/cli.hpp"

int main(int argc, char** argv) { return infosculpt::run_cli(argc, argv); }
