#pragma once

#include <cstdint>
#include <random>
#include <span>

#include "dapr/cache_rl.h"

// Heuristic admission rules the learned policy is compared against.
namespace dapr::sim {

struct CandidateStats {
  rl::ContentId id = 0;
  std::uint64_t size_bytes = 0;
  std::uint64_t slot_count = 0;  // requests for the item at this RSU in the current slot
};

struct EpsGreedyDecision {
  rl::CacheAction action;
  bool explored = false;
};

// With probability 1 - epsilon admits the most requested candidates (count
// descending, then id) while their total size fits the capacity; otherwise
// admits a uniformly random candidate subset.
EpsGreedyDecision baseline_epsilon_greedy(std::span<const CandidateStats> candidates,
                                          std::uint64_t capacity_bytes, double epsilon,
                                          std::mt19937_64& rng);

// Every subset equally likely.
rl::CacheAction random_admission(std::size_t candidates, std::mt19937_64& rng);

// Admits every candidate requested this slot (LRU and LFU admission).
rl::CacheAction admit_requested(std::span<const CandidateStats> candidates);

}  // namespace dapr::sim
