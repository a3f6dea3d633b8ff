#include "idlab/cli.hpp"

int main(int argc, char** argv) {
    return idlab::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
