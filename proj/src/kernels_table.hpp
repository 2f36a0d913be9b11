#pragma once

#include <cstddef>

namespace distdpo::kernels::detail {

struct KernelTable {
  double (*dot)(const double*, const double*, std::size_t);
  double (*sum_sq)(const double*, std::size_t);
  double (*dist_sq)(const double*, const double*, std::size_t);
  void (*axpy)(double, const double*, double*, std::size_t);
  void (*scale)(double*, double, std::size_t);
  void (*sub)(const double*, const double*, double*, std::size_t);
};

const KernelTable* avx2_table();

}  // namespace distdpo::kernels::detail
