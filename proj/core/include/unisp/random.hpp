#pragma once

#include <cstddef>
#include <random>
#include <utility>
#include <vector>

namespace unisp {

/// Uniform index in [0, n). rng() % n keeps sequences identical across standard libraries.
inline std::size_t pick(std::mt19937_64& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }

template <typename T>
const T& pick_from(std::mt19937_64& rng, const std::vector<T>& items) {
  return items[pick(rng, items.size())];
}

/// Fisher-Yates with pick(); portable counterpart of std::shuffle.
template <typename T>
void shuffle(std::vector<T>& items, std::mt19937_64& rng) {
  for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[pick(rng, i)]);
}

}  // namespace unisp
