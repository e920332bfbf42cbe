#include "facml/cli.hpp"

int main(int argc, char** argv) { return facml::run_cli(argc, argv); }
