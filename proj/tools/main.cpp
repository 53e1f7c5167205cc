#include "viewsel/cli.hpp"

int main(int argc, char** argv) { return viewsel::cli::run(argc, argv); }
