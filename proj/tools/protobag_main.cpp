#include "protobag/cli.hpp"

int main(int argc, char** argv) { return protobag::run_cli(argc, argv); }
