#pragma once

#include <cstddef>

namespace relm::kernels::detail {

double squared_l2_scalar(const double* a, const double* b, std::size_t n);
double dot_scalar(const double* a, const double* b, std::size_t n);
void axpy_scalar(double alpha, const double* x, double* y, std::size_t n);

#if defined(RELM_HAVE_AVX2_KERNELS)
double squared_l2_avx2(const double* a, const double* b, std::size_t n);
double dot_avx2(const double* a, const double* b, std::size_t n);
void axpy_avx2(double alpha, const double* x, double* y, std::size_t n);
#endif

#if defined(RELM_HAVE_NEON_KERNELS)
double squared_l2_neon(const double* a, const double* b, std::size_t n);
double dot_neon(const double* a, const double* b, std::size_t n);
void axpy_neon(double alpha, const double* x, double* y, std::size_t n);
#endif

}  // namespace relm::kernels::detail
