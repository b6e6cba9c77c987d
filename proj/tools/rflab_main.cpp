#include "rflab/runner.hpp"

int main(int argc, char** argv) { return rflab::run_cli(argc, argv); }
