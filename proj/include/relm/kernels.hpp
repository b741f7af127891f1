#pragma once

// Data-parallel inner loops used by retrieval and the encoder.
//
// Every kernel exists as a scalar reference and as SIMD variants (AVX2 on
// x86-64, NEON on aarch64). The active variant is picked once at runtime from
// the CPU's capabilities; RELM_FORCE_SCALAR=1 in the environment pins the
// scalar path.
//
// Reductions use a fixed four-lane layout: lane j accumulates the elements
// whose index is congruent to j mod 4 over the largest multiple-of-four
// prefix, lanes are combined as (l0 + l1) + (l2 + l3), and the remaining tail
// is added left to right. The scalar reference follows the same order, so all
// variants return bitwise identical results. Callers may therefore mix
// variants (an index built on one machine, queried on another) without
// perturbing distance ties.

#include <cstddef>
#include <span>
#include <string_view>

namespace relm::kernels {

enum class Isa { Scalar, Avx2, Neon };

std::string_view to_string(Isa isa);

struct KernelTable {
  Isa isa;
  double (*squared_l2)(const double* a, const double* b, std::size_t n);
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
};

const KernelTable& scalar_table();

// nullptr when the variant was not compiled in or the CPU lacks it.
const KernelTable* avx2_table();
const KernelTable* neon_table();

const KernelTable& active();

double squared_l2(std::span<const double> a, std::span<const double> b);
double dot(std::span<const double> a, std::span<const double> b);
void axpy(double alpha, std::span<const double> x, std::span<double> y);

}  // namespace relm::kernels
