#pragma once

#include <malloc.h>

namespace npc {

// Keeps glibc from returning the step-sized scratch blocks to the kernel on
// every free; the training loop otherwise spends a large share of its time
// in page faults. Call once at program start.
inline void init_runtime() {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
}

}  // namespace npc
