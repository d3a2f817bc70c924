#include "cli.h"

int main(int argc, char** argv) { return posttrain::cli::main(argc, argv); }
