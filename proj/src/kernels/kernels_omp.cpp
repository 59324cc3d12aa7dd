#include "rfsr/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#define RFSR_STR(s) #s
#define RFSR_PFOR(cond) _Pragma(RFSR_STR(omp parallel for schedule(static) if(cond)))
#else
#define RFSR_PFOR(cond)
#endif

#define RFSR_KERNEL_NS parallel
#include "kernels_impl.inl"

namespace rfsr::kernels {

int parallel_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace rfsr::kernels
