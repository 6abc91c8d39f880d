#pragma once

#include <complex>
#include <span>
#include <vector>

namespace lbnp {

bool is_power_of_two(std::size_t n);
std::size_t next_power_of_two(std::size_t n);

// In-place iterative radix-2 FFT. data.size() must be a power of two.
void fft_inplace(std::span<std::complex<double>> data);

// Forward DFT of a real sequence (power-of-two length); returns all N bins.
std::vector<std::complex<double>> fft_real(std::span<const double> x);

}  // namespace lbnp
