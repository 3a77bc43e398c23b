#include "protoform/cli.hpp"

int main(int argc, char** argv) { return protoform::run_cli(argc, argv); }
