#include "tilesynth/cli.hpp"

int main(int argc, char** argv) { return tilesynth::cli_main(argc, argv); }
