#pragma once

// In-process allocation statistics. Binaries that link the dass_memtrack
// object library get global operator new/delete replaced with counting
// versions; peak() then reports the high-water mark of live heap bytes.
// This intentionally measures allocator traffic, not OS RSS: it is
// deterministic across runs, which is what the bench wants.

#include <cstddef>

namespace dass::memtrack {

bool available();
std::size_t live_bytes();
std::size_t peak_bytes();
void reset_peak();

}  // namespace dass::memtrack
