#include <string>
#include <vector>

#include "tsa/cli.hpp"

int main(int argc, char** argv) {
    return tsa::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
