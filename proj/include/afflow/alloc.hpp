#pragma once

namespace afflow {

// Training frees and reallocates the same large activation buffers every
// step; by default glibc serves them with mmap and returns them to the OS
// each time, which costs page faults. This keeps freed memory in the heap.
// No-op on other C libraries.
void keep_freed_memory();

}  // namespace afflow
