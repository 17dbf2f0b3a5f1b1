#pragma once

namespace feddis {

/// Keeps freed tensor buffers in the heap instead of returning them to the
/// OS. Training allocates and frees thousands of mid-sized matrices per batch;
/// with glibc defaults each one is a fresh mmap and page faults dominate the
/// run time. Safe to call more than once; a no-op off glibc.
void configure_allocator();

}  // namespace feddis
