#include "dr/runner.hpp"

int main(int argc, const char** argv) {
    return dr::run_cli(argc, argv);
}
