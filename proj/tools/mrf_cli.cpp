#include "mrf/cli.hpp"

int main(int argc, char** argv) { return mrf::run_cli(argc, argv); }
