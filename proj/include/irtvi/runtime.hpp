#pragma once

#include <malloc.h>

namespace irtvi {

// Training allocates many short-lived matrices above glibc's default mmap
// threshold; keeping them on the heap avoids an mmap/munmap pair per
// temporary. Call once at the top of main().
inline void tune_allocator() {
#ifdef M_MMAP_THRESHOLD
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace irtvi
