#include "jointscen/cli.hpp"

int main(int argc, char** argv) { return jointscen::run_cli(argc, argv); }
