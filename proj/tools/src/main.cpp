#include "ndesteer_cli/cli.hpp"

int main(int argc, char** argv) { return ndesteer::cli::dispatch(argc, argv); }
