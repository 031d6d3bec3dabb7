#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace unitgraph {

// Training allocates and frees the same large activation buffers every
// step. Serving them from mmap costs a page fault per touched page on each
// reuse; keeping them on the heap lets freed blocks be recycled. Call once
// at program start. No-op outside glibc.
inline void keep_freed_memory() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_MAX, 0);
  mallopt(M_TRIM_THRESHOLD, -1);
#endif
}

}  // namespace unitgraph
