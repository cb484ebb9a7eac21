#include "palm/cli.hpp"

int main(int argc, char** argv) { return palm::cli::run(argc, argv); }
