#include "flashsplit/cli/commands.hpp"

int main(int argc, char** argv) { return flashsplit::run_cli(argc, argv); }
