#include "ocil/cli.hpp"

int main(int argc, char** argv) { return ocil::cli_main(argc, argv); }
