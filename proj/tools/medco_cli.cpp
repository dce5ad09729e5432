#include "medco/cli.hpp"

int main(int argc, char** argv) { return medco::run_cli(argc, argv); }
