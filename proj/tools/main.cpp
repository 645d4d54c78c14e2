#include "phonssm/cli.hpp"

int main(int argc, char** argv) { return phonssm::run_cli(argc, argv); }
