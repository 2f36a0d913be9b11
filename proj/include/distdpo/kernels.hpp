#pragma once

#include <optional>
#include <span>
#include <string_view>

// Dense vector primitives used by the training loops and Monte Carlo
// estimators. A scalar reference implementation is always available; an
// AVX2+FMA variant is selected at runtime when the host supports it.
namespace distdpo::kernels {

enum class Backend { scalar, avx2 };

Backend active_backend();
std::string_view backend_name(Backend b);

// Test hook: pin the backend (nullopt restores auto-detection).
// Throws std::invalid_argument if the requested backend is unavailable.
void force_backend(std::optional<Backend> b);

bool host_supports_avx2();

double dot(std::span<const double> x, std::span<const double> y);
double sum_sq(std::span<const double> x);
double dist_sq(std::span<const double> x, std::span<const double> y);

// y += a * x
void axpy(double a, std::span<const double> x, std::span<double> y);
// x *= a
void scale(std::span<double> x, double a);
// out = x - y
void sub(std::span<const double> x, std::span<const double> y, std::span<double> out);

}  // namespace distdpo::kernels
