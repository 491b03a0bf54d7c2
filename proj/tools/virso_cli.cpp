#include <malloc.h>

#include <string>
#include <vector>

#include "virso/cli.hpp"

int main(int argc, char** argv) {
  // Training churns through large short-lived buffers; keep them in the heap
  // instead of mapping and trimming pages on every step.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return virso::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
