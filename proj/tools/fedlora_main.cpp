#include "fedlora/expcli.hpp"

int main(int argc, char** argv) { return fedlora::run_cli(argc, argv); }
