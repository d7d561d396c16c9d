#include "eventlm/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>
#include <stdexcept>

namespace eventlm::kernels {
namespace {

Backend pick_default() {
  if (const char* env = std::getenv("EVENTLM_KERNELS")) {
    if (std::strcmp(env, "scalar") == 0) return Backend::Scalar;
    if (std::strcmp(env, "avx2") == 0) {
      if (!avx2_supported()) throw std::runtime_error("EVENTLM_KERNELS=avx2: not supported here");
      return Backend::Avx2;
    }
    throw std::runtime_error(std::string("EVENTLM_KERNELS: unknown backend '") + env + "'");
  }
  return avx2_supported() ? Backend::Avx2 : Backend::Scalar;
}

Backend& current() {
  static Backend b = pick_default();
  return b;
}

std::atomic<std::uint64_t> g_flops{0};

}  // namespace

bool avx2_supported() {
#if defined(__x86_64__) || defined(_M_X64)
  return avx2::compiled && __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

Backend active_backend() { return current(); }

void set_backend(Backend b) {
  if (b == Backend::Avx2 && !avx2_supported())
    throw std::runtime_error("set_backend: avx2 not supported on this machine");
  current() = b;
}

std::string_view backend_name() {
  return current() == Backend::Avx2 ? "avx2" : "scalar";
}

const Kernels<float>& f32() {
  return current() == Backend::Avx2 ? avx2::f32 : scalar::f32;
}

const Kernels<double>& f64() {
  return current() == Backend::Avx2 ? avx2::f64 : scalar::f64;
}

std::uint64_t flop_count() { return g_flops.load(std::memory_order_relaxed); }
void reset_flop_count() { g_flops.store(0, std::memory_order_relaxed); }
void add_flops(std::uint64_t n) { g_flops.fetch_add(n, std::memory_order_relaxed); }

}  // namespace eventlm::kernels
