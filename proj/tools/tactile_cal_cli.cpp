#include "tactile_cal/cli.hpp"

int main(int argc, char** argv) { return tactile_cal::cli::run(argc, argv); }
