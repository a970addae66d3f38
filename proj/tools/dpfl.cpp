#include "dpfl/cli.hpp"

int main(int argc, char** argv) { return dpfl::run(argc, argv); }
