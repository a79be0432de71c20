#include "rcn/cli.hpp"

int main(int argc, char** argv) { return rcn::run_cli(argc, argv); }
