#include "distdpo/kernels.hpp"

#include <atomic>
#include <stdexcept>

#include "kernels_table.hpp"

namespace distdpo::kernels {
namespace {

double dot_scalar(const double* x, const double* y, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

double sum_sq_scalar(const double* x, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * x[i];
  return acc;
}

double dist_sq_scalar(const double* x, const double* y, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = x[i] - y[i];
    acc += d * d;
  }
  return acc;
}

void axpy_scalar(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void scale_scalar(double* x, double a, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] *= a;
}

void sub_scalar(const double* x, const double* y, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] - y[i];
}

constexpr detail::KernelTable kScalarTable = {
    dot_scalar, sum_sq_scalar, dist_sq_scalar, axpy_scalar, scale_scalar, sub_scalar,
};

std::atomic<const detail::KernelTable*> g_table{nullptr};
std::atomic<Backend> g_backend{Backend::scalar};

void select(Backend b) {
  if (b == Backend::avx2) {
    const detail::KernelTable* t = detail::avx2_table();
    if (t == nullptr || !host_supports_avx2())
      throw std::invalid_argument("avx2 backend unavailable on this host");
    g_table.store(t);
  } else {
    g_table.store(&kScalarTable);
  }
  g_backend.store(b);
}

const detail::KernelTable& table() {
  const detail::KernelTable* t = g_table.load(std::memory_order_acquire);
  if (t == nullptr) {
    if (host_supports_avx2() && detail::avx2_table() != nullptr)
      select(Backend::avx2);
    else
      select(Backend::scalar);
    t = g_table.load();
  }
  return *t;
}

void check_same_size(std::size_t a, std::size_t b) {
  if (a != b) throw std::invalid_argument("kernel operands differ in length");
}

}  // namespace

bool host_supports_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend active_backend() {
  table();
  return g_backend.load();
}

std::string_view backend_name(Backend b) {
  return b == Backend::avx2 ? "avx2" : "scalar";
}

void force_backend(std::optional<Backend> b) {
  if (b.has_value()) {
    select(*b);
  } else {
    g_table.store(nullptr);
    table();
  }
}

double dot(std::span<const double> x, std::span<const double> y) {
  check_same_size(x.size(), y.size());
  return table().dot(x.data(), y.data(), x.size());
}

double sum_sq(std::span<const double> x) { return table().sum_sq(x.data(), x.size()); }

double dist_sq(std::span<const double> x, std::span<const double> y) {
  check_same_size(x.size(), y.size());
  return table().dist_sq(x.data(), y.data(), x.size());
}

void axpy(double a, std::span<const double> x, std::span<double> y) {
  check_same_size(x.size(), y.size());
  table().axpy(a, x.data(), y.data(), x.size());
}

void scale(std::span<double> x, double a) { table().scale(x.data(), a, x.size()); }

void sub(std::span<const double> x, std::span<const double> y, std::span<double> out) {
  check_same_size(x.size(), y.size());
  check_same_size(x.size(), out.size());
  table().sub(x.data(), y.data(), out.data(), x.size());
}

#if !defined(__x86_64__) && !defined(_M_X64)
namespace detail {
const KernelTable* avx2_table() { return nullptr; }
}  // namespace detail
#endif

}  // namespace distdpo::kernels
