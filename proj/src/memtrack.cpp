// Counting replacements for the global allocation functions. Each block is
// over-allocated by a small header that records its size and the offset back
// to the raw malloc pointer, so sized and unsized deletes both work.

#include "dass/memtrack.hpp"

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <new>

namespace {

std::atomic<std::size_t> g_live{0};
std::atomic<std::size_t> g_peak{0};

struct Header {
  std::size_t size;
  std::uint32_t offset;  // bytes from raw pointer to user pointer
  std::uint32_t magic;
};

constexpr std::uint32_t kMagic = 0x6d'74'72'6bu;  // "mtrk"

void bump(std::size_t n) {
  std::size_t live = g_live.fetch_add(n, std::memory_order_relaxed) + n;
  std::size_t peak = g_peak.load(std::memory_order_relaxed);
  while (live > peak && !g_peak.compare_exchange_weak(peak, live, std::memory_order_relaxed)) {
  }
}

void* tracked_alloc(std::size_t size, std::size_t align) {
  if (align < alignof(std::max_align_t)) align = alignof(std::max_align_t);
  std::size_t header_room = sizeof(Header) + align;
  void* raw = std::malloc(size + header_room);
  if (!raw) return nullptr;
  auto base = reinterpret_cast<std::uintptr_t>(raw) + sizeof(Header);
  std::uintptr_t user = (base + align - 1) / align * align;
  auto* h = reinterpret_cast<Header*>(user - sizeof(Header));
  h->size = size;
  h->offset = std::uint32_t(user - reinterpret_cast<std::uintptr_t>(raw));
  h->magic = kMagic;
  bump(size);
  return reinterpret_cast<void*>(user);
}

void tracked_free(void* p) {
  if (!p) return;
  auto user = reinterpret_cast<std::uintptr_t>(p);
  auto* h = reinterpret_cast<Header*>(user - sizeof(Header));
  if (h->magic != kMagic) {
    // not ours (allocated before this TU was linked in); leak rather than corrupt
    return;
  }
  g_live.fetch_sub(h->size, std::memory_order_relaxed);
  std::free(reinterpret_cast<void*>(user - h->offset));
}

}  // namespace

namespace dass::memtrack {

bool available() { return true; }
std::size_t live_bytes() { return g_live.load(std::memory_order_relaxed); }
std::size_t peak_bytes() { return g_peak.load(std::memory_order_relaxed); }
void reset_peak() { g_peak.store(g_live.load(std::memory_order_relaxed), std::memory_order_relaxed); }

}  // namespace dass::memtrack

void* operator new(std::size_t size) {
  void* p = tracked_alloc(size, alignof(std::max_align_t));
  if (!p) throw std::bad_alloc();
  return p;
}
void* operator new[](std::size_t size) { return ::operator new(size); }
void* operator new(std::size_t size, std::align_val_t al) {
  void* p = tracked_alloc(size, std::size_t(al));
  if (!p) throw std::bad_alloc();
  return p;
}
void* operator new[](std::size_t size, std::align_val_t al) { return ::operator new(size, al); }
void* operator new(std::size_t size, const std::nothrow_t&) noexcept {
  return tracked_alloc(size, alignof(std::max_align_t));
}
void* operator new[](std::size_t size, const std::nothrow_t&) noexcept {
  return tracked_alloc(size, alignof(std::max_align_t));
}

void operator delete(void* p) noexcept { tracked_free(p); }
void operator delete[](void* p) noexcept { tracked_free(p); }
void operator delete(void* p, std::size_t) noexcept { tracked_free(p); }
void operator delete[](void* p, std::size_t) noexcept { tracked_free(p); }
void operator delete(void* p, std::align_val_t) noexcept { tracked_free(p); }
void operator delete[](void* p, std::align_val_t) noexcept { tracked_free(p); }
void operator delete(void* p, std::size_t, std::align_val_t) noexcept { tracked_free(p); }
void operator delete[](void* p, std::size_t, std::align_val_t) noexcept { tracked_free(p); }
void operator delete(void* p, const std::nothrow_t&) noexcept { tracked_free(p); }
void operator delete[](void* p, const std::nothrow_t&) noexcept { tracked_free(p); }
