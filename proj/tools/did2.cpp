#include <string>
#include <vector>

#include "deepid/cli.hpp"

int main(int argc, char** argv) {
    return deepid::cli::dispatch(std::vector<std::string>(argv + 1, argv + argc));
}
