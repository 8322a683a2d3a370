#pragma once

// Shared primitives: error types, dense containers, deterministic RNG,
// FNV hashing, and a chunked parallel-for used for batch parallelism.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace dass {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidParameter : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Thrown when a forward pass would exceed the configured memory budget.
// Callers (NIAH sweep, scaling bench) catch this and record the condition
// as "exceeded-capacity" instead of crashing.
class ResourceExhausted : public Error {
 public:
  ResourceExhausted(std::size_t needed_bytes, std::size_t budget_bytes)
      : Error("resource exhausted: needs " + std::to_string(needed_bytes) +
              " bytes, budget " + std::to_string(budget_bytes)),
        needed(needed_bytes),
        budget(budget_bytes) {}
  std::size_t needed = 0;
  std::size_t budget = 0;
};

// Raised by the training loop when the loss goes non-finite. Carries a
// small diagnostic record (JSON) describing where training stopped.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& msg, std::string diag)
      : Error(msg), record(std::move(diag)) {}
  std::string record;
};

inline void require_param(bool ok, const char* msg) {
  if (!ok) throw InvalidParameter(msg);
}
inline void require_shape(bool ok, const char* msg) {
  if (!ok) throw ShapeError(msg);
}
inline void require_arg(bool ok, const char* msg) {
  if (!ok) throw InvalidArgument(msg);
}

// Row-major 2D array.
template <typename T>
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<T> v;

  Mat() = default;
  Mat(int r, int c, T fill = T(0)) : rows(r), cols(c), v(std::size_t(r) * c, fill) {}

  T& operator()(int r, int c) { return v[std::size_t(r) * cols + c]; }
  const T& operator()(int r, int c) const { return v[std::size_t(r) * cols + c]; }
  T* row(int r) { return v.data() + std::size_t(r) * cols; }
  const T* row(int r) const { return v.data() + std::size_t(r) * cols; }
  std::size_t size() const { return v.size(); }
  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

// Row-major (H, W, C) array; index = (h*W + w)*C + c.
template <typename T>
struct Map3 {
  int h = 0;
  int w = 0;
  int c = 0;
  std::vector<T> v;

  Map3() = default;
  Map3(int hh, int ww, int cc, T fill = T(0))
      : h(hh), w(ww), c(cc), v(std::size_t(hh) * ww * cc, fill) {}

  T& operator()(int i, int j, int k) { return v[(std::size_t(i) * w + j) * c + k]; }
  const T& operator()(int i, int j, int k) const {
    return v[(std::size_t(i) * w + j) * c + k];
  }
  T* site(int i, int j) { return v.data() + (std::size_t(i) * w + j) * c; }
  const T* site(int i, int j) const { return v.data() + (std::size_t(i) * w + j) * c; }
  int positions() const { return h * w; }
  std::size_t size() const { return v.size(); }
  bool same_shape(const Map3& o) const { return h == o.h && w == o.w && c == o.c; }
};

template <typename T>
bool all_finite(const std::vector<T>& v) {
  for (const T& x : v)
    if (!std::isfinite(double(x))) return false;
  return true;
}

// splitmix64; used to derive independent substream seeds.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic RNG. Gaussian draws use Box-Muller on explicit uniforms so
// results do not depend on the standard library's distribution internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : s_(seed ? seed : 0x6a09e667f3bcc909ULL) {}

  std::uint64_t next_u64() { return splitmix64(s_); }

  // uniform in [0, 1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // inclusive bounds
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    return lo + std::int64_t(next_u64() % std::uint64_t(hi - lo + 1));
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double th = 2.0 * M_PI * u2;
    spare_ = r * std::sin(th);
    have_spare_ = true;
    return r * std::cos(th);
  }

  // Independent child stream; stable under reordering of sibling draws.
  Rng derive(std::uint64_t stream_id) const {
    std::uint64_t mix = s_ ^ (0x9e3779b97f4a7c15ULL * (stream_id + 1));
    return Rng(splitmix64(mix));
  }

 private:
  std::uint64_t s_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// FNV-1a 64-bit.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
std::uint64_t fnv1a64_vec(const std::vector<T>& v, std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a64(v.data(), v.size() * sizeof(T), h);
}

inline std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

// Runs fn(begin, end, worker_index) over [0, n) split into contiguous chunks,
// one per worker. Deterministic partitioning; callers that reduce must do so
// in worker-index order.
inline void parallel_chunks(int n, int workers,
                            const std::function<void(int, int, int)>& fn) {
  if (n <= 0) return;
  if (workers < 1) workers = 1;
  if (workers > n) workers = n;
  if (workers == 1) {
    fn(0, n, 0);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(std::size_t(workers));
  std::vector<std::exception_ptr> errors(std::size_t(workers), nullptr);
  int base = n / workers, rem = n % workers, start = 0;
  for (int w = 0; w < workers; ++w) {
    int len = base + (w < rem ? 1 : 0);
    int b = start, e = start + len;
    start = e;
    pool.emplace_back([&fn, &errors, b, e, w] {
      try {
        fn(b, e, w);
      } catch (...) {
        errors[std::size_t(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& err : errors)
    if (err) std::rethrow_exception(err);
}

inline int hardware_workers() {
  unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : int(n);
}

}  // namespace dass
