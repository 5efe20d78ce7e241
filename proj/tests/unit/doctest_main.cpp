#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "dpsep/runtime.hpp"

int main(int argc, char** argv) {
  dpsep::configure_allocator();
  doctest::Context ctx(argc, argv);
  return ctx.run();
}
