#pragma once

// Process-wide runtime tuning for the command-line and test drivers.

namespace nino {

/// Keeps large freed blocks inside the heap instead of returning them to the
/// OS. Autograd tapes allocate and drop multi-megabyte buffers every step;
/// with the default glibc thresholds most of the training time goes to page
/// faults. No-op on other C libraries.
void configure_allocator();

}  // namespace nino
