#include <iostream>

#include "sci/cli.hpp"

int main(int argc, char** argv) { return sci::cli::dispatch(argc, argv, std::cout, std::cerr); }
