#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "breen/threads.hpp"

int main(int argc, char** argv) {
    breen::init_threads_from_env();
    return doctest::Context(argc, argv).run();
}
