#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "kdadapt/allocator.hpp"

int main(int argc, char **argv) {
    kdadapt::configure_allocator();
    doctest::Context context;
    context.applyCommandLine(argc, argv);
    return context.run();
}
