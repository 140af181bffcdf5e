#include "lrdif/cli.hpp"

int main(int argc, char** argv) { return lrdif::cli_dispatch(argc, argv); }
