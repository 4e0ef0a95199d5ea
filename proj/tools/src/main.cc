#include "selind_cli/cli.h"

int main(int argc, char** argv) { return selind::cli::run(argc, argv); }
