#pragma once

namespace kdadapt {

// Keeps glibc from returning large blocks to the kernel after every free.
// The training loop allocates and drops many mid-sized matrices per update,
// which otherwise turns into a stream of mmap/munmap calls.
void configure_allocator();

} // namespace kdadapt
