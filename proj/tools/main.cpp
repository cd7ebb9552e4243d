#include "tpn/cli.hpp"

int main(int argc, char** argv) { return tpn::run_cli(argc, argv); }
