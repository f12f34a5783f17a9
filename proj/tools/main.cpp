#include "wishflow/commands.hpp"

int main(int argc, char **argv) { return wishflow::cli::run(argc, argv); }
