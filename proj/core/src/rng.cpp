#include "headgame/rng.hpp"

#include <cstdio>
#include <cstring>

namespace headgame {

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

Rng make_stream(std::uint64_t seed, std::string_view name) {
  const std::uint64_t tag = fnv1a(name);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(tag >> 32)};
  return Rng(seq);
}

std::string fingerprint(std::string_view bytes) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(bytes)));
  return buf;
}

std::string fingerprint(std::span<const double> values) {
  std::string bytes(values.size() * sizeof(double), '\0');
  if (!values.empty()) std::memcpy(bytes.data(), values.data(), bytes.size());
  return fingerprint(std::string_view(bytes));
}

Matrix gaussian_matrix(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (double& x : m.data()) x = dist(rng);
  return m;
}

Matrix uniform_matrix(Rng& rng, std::size_t rows, std::size_t cols, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Matrix m(rows, cols);
  for (double& x : m.data()) x = dist(rng);
  return m;
}

}  // namespace headgame
