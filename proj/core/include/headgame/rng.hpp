#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>

#include "headgame/numerics.hpp"

namespace headgame {

using Rng = std::mt19937_64;

// Independent generator for a named stream ("init", "data", "noise",
// "bootstrap", ...) derived from a run seed. Adding a stream never perturbs
// the others.
Rng make_stream(std::uint64_t seed, std::string_view name);

// 16 hex digits of the 64-bit FNV-1a hash; identifies configs and data sets
// in run logs.
std::string fingerprint(std::string_view bytes);
std::string fingerprint(std::span<const double> values);

Matrix gaussian_matrix(Rng& rng, std::size_t rows, std::size_t cols, double stddev = 1.0);
Matrix uniform_matrix(Rng& rng, std::size_t rows, std::size_t cols, double lo, double hi);

}  // namespace headgame
