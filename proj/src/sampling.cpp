#include "impsym/sampling.hpp"

namespace impsym {

namespace {

constexpr unsigned kPrimes[] = {2,  3,  5,  7,  11, 13, 17, 19, 23, 29, 31, 37, 41, 43,
                                47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103, 107,
                                109, 113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173};

double radical_inverse(std::size_t index, unsigned base) {
  double inv = 1.0 / base;
  double f = inv;
  double r = 0.0;
  while (index > 0) {
    r += f * static_cast<double>(index % base);
    index /= base;
    f *= inv;
  }
  return r;
}

}  // namespace

void halton_point(std::size_t index, std::span<double> out) {
  constexpr std::size_t nprimes = sizeof(kPrimes) / sizeof(kPrimes[0]);
  for (std::size_t d = 0; d < out.size(); ++d) {
    // Dimensions beyond the prime table reuse bases with a scrambled index.
    const unsigned base = kPrimes[d % nprimes];
    const std::size_t idx = index + 1 + (d / nprimes) * 7919;
    out[d] = radical_inverse(idx, base);
  }
}

std::vector<double> halton_point(std::size_t index, std::size_t dim) {
  std::vector<double> p(dim);
  halton_point(index, p);
  return p;
}

}  // namespace impsym
