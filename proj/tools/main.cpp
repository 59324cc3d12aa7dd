#include "rfsr/cli.hpp"

int main(int argc, char** argv) { return rfsr::run_cli(argc, argv); }
