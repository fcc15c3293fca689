#include "goldizone/cli.hpp"

int main(int argc, char** argv) { return gz::cli::main_entry(argc, argv); }
