#include "nlpf/cli.hpp"

int main(int argc, char** argv) { return nlpf::cli_main(argc, argv); }
