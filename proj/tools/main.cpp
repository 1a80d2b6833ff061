#include "cli.hpp"

int main(int argc, char** argv) { return modaldx::cli::run(argc, argv); }
