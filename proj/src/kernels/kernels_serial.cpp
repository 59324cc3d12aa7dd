#include "rfsr/kernels.hpp"

#define RFSR_KERNEL_NS serial
#define RFSR_PFOR(cond) (void)(cond);
#include "kernels_impl.inl"
