// Weak fallbacks so code can query allocation statistics without requiring
// the operator-new replacement to be linked in. Binaries that link
// dass_memtrack get the strong definitions instead.

#include "dass/memtrack.hpp"

namespace dass::memtrack {

__attribute__((weak)) bool available() { return false; }
__attribute__((weak)) std::size_t live_bytes() { return 0; }
__attribute__((weak)) std::size_t peak_bytes() { return 0; }
__attribute__((weak)) void reset_peak() {}

}  // namespace dass::memtrack
