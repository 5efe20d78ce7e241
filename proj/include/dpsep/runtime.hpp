#pragma once

namespace dpsep {

// Keeps freed heap memory mapped so the per-step matrix temporaries do not
// round-trip through the kernel. Call once from main(); no-op off glibc.
void configure_allocator();

}  // namespace dpsep
