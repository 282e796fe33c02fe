#include "dapr/baselines.h"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace dapr::sim {

EpsGreedyDecision baseline_epsilon_greedy(std::span<const CandidateStats> candidates,
                                          std::uint64_t capacity_bytes, double epsilon,
                                          std::mt19937_64& rng) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw std::invalid_argument("epsilon must lie in [0, 1]");
  EpsGreedyDecision d;
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  if (u < epsilon) {
    d.explored = true;
    d.action = random_admission(candidates.size(), rng);
    return d;
  }
  d.action.assign(candidates.size(), 0);
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (candidates[a].slot_count != candidates[b].slot_count) {
      return candidates[a].slot_count > candidates[b].slot_count;
    }
    return candidates[a].id < candidates[b].id;
  });
  std::uint64_t used = 0;
  for (std::size_t i : order) {
    if (candidates[i].slot_count == 0) break;
    if (candidates[i].size_bytes > capacity_bytes - used) continue;
    used += candidates[i].size_bytes;
    d.action[i] = 1;
  }
  return d;
}

rl::CacheAction random_admission(std::size_t candidates, std::mt19937_64& rng) {
  rl::CacheAction a(candidates);
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < candidates; ++i) {
    if (i % 64 == 0) bits = rng();
    a[i] = static_cast<std::uint8_t>((bits >> (i % 64)) & 1u);
  }
  return a;
}

rl::CacheAction admit_requested(std::span<const CandidateStats> candidates) {
  rl::CacheAction a(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) a[i] = candidates[i].slot_count > 0;
  return a;
}

}  // namespace dapr::sim
