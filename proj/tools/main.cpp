#include "cotforge/cli.hpp"

int main(int argc, char** argv) { return cotforge::run_cli(argc, argv); }
