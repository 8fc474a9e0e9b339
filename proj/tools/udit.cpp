#include "udit/cli.hpp"

int main(int argc, char** argv) { return udit::cli::run(argc, argv); }
