#include "relm/kernels.hpp"

#include <cassert>
#include <cstdlib>
#include <cstring>

#include "kernels_impl.hpp"

namespace relm::kernels {

std::string_view to_string(Isa isa) {
  switch (isa) {
    case Isa::Scalar: return "scalar";
    case Isa::Avx2: return "avx2";
    case Isa::Neon: return "neon";
  }
  return "unknown";
}

const KernelTable& scalar_table() {
  static const KernelTable table{Isa::Scalar, &detail::squared_l2_scalar, &detail::dot_scalar,
                                 &detail::axpy_scalar};
  return table;
}

const KernelTable* avx2_table() {
#if defined(RELM_HAVE_AVX2_KERNELS)
  static const bool supported = __builtin_cpu_supports("avx2");
  static const KernelTable table{Isa::Avx2, &detail::squared_l2_avx2, &detail::dot_avx2,
                                 &detail::axpy_avx2};
  return supported ? &table : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable* neon_table() {
#if defined(RELM_HAVE_NEON_KERNELS)
  // NEON is baseline on aarch64.
  static const KernelTable table{Isa::Neon, &detail::squared_l2_neon, &detail::dot_neon,
                                 &detail::axpy_neon};
  return &table;
#else
  return nullptr;
#endif
}

namespace {

const KernelTable& select_table() {
  const char* force = std::getenv("RELM_FORCE_SCALAR");
  if (force != nullptr && std::strcmp(force, "0") != 0 && *force != '\0') return scalar_table();
  if (const KernelTable* t = avx2_table()) return *t;
  if (const KernelTable* t = neon_table()) return *t;
  return scalar_table();
}

}  // namespace

const KernelTable& active() {
  static const KernelTable& table = select_table();
  return table;
}

double squared_l2(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  return active().squared_l2(a.data(), b.data(), a.size());
}

double dot(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  return active().dot(a.data(), b.data(), a.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  assert(x.size() == y.size());
  active().axpy(alpha, x.data(), y.data(), x.size());
}

}  // namespace relm::kernels
