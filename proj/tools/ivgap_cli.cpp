#include "ivgap/cli.hpp"

int main(int argc, char** argv) { return ivgap::cli::run(argc, argv); }
