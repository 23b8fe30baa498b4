#include "cli.hpp"

int main(int argc, char** argv) { return caidc::cli::dispatch(argc, argv); }
