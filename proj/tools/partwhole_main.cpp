#include "partwhole/cli.hpp"

int main(int argc, char** argv) { return partwhole::cli::dispatch(argc, argv); }
