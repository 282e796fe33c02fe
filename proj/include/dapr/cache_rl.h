#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "dapr/cache_state.h"
#include "dapr/comms.h"

// The caching MDP: composite reward, action application and state encoding.
namespace dapr::rl {

using cache::ContentId;

// a_i = 1 admits candidate i.
using CacheAction = std::vector<std::uint8_t>;

enum class InnerLambda { kAsWritten, kOmit };

struct RewardConfig {
  std::array<double, 3> lambda{0.1, 0.2, 0.7};  // local, neighbour RSU, base station
  double xi = 0.5;
  double zeta = 0.5;
  InnerLambda inner = InnerLambda::kAsWritten;

  void validate() const;
};

struct ServedRequest {
  comms::PathKind path = comms::PathKind::kBaseStation;
  double delay_s = 0.0;
};

// Sum over requests f of -l_p (xi t_f - zeta (1 - l'_p hits_p / total)),
// where hits_p counts the slot's requests served over path class p and l'_p is
// l_p or 1 depending on `inner`.
double reward(std::span<const ServedRequest> served, const RewardConfig& cfg);

struct Candidate {
  ContentId id = 0;
  std::uint64_t size_bytes = 0;
};

struct ApplyResult {
  cache::CacheState cache;
  std::vector<ContentId> admitted;
  std::vector<ContentId> evicted;
  std::vector<ContentId> skipped;  // could not be made to fit
};

using PopularityFn = std::function<double(ContentId)>;

// Admits candidates with a_i = 1 in candidate order. To make room it evicts
// residents with the lowest predicted popularity (ties: lower id first), never
// one admitted in this call. A candidate that cannot fit even after evicting
// every evictable resident is skipped. New items start with access count 0.
ApplyResult apply_action(const cache::CacheState& cache, const CacheAction& action,
                         std::span<const Candidate> candidates, const PopularityFn& popularity);

struct StateSpec {
  std::size_t cached_slots = 8;  // n: cached items encoded, most accessed first
  std::size_t candidates = 8;    // m
  std::size_t forecast_top_k = 8;
  std::size_t catalog_size = 1;
  std::uint64_t capacity_bytes = 1;

  std::size_t dim() const;
};

struct CandidateFeatures {
  ContentId id = 0;
  double request_share = 0.0;  // this slot's requests for the item / all requests
  std::uint64_t size_bytes = 0;
  double predicted_popularity = 0.0;
  double heat = 0.0;  // heatmap decay score
};

// Layout: n x (id, access count, size, forecast) for cached items, cache
// utilization, m x (request share, cached flag, size, predicted popularity,
// heat, edge), then the top-K forecast probabilities in decreasing order. Edge
// is 1 for an uncached candidate that fits in free space, otherwise
// p / (p + p_min) against the least popular resident (0.5 when both are 0), and
// 0 for padding or cached items. Every entry is clipped to [0, 1]; counts are
// scaled by their maximum and popularity (cached and candidate alike) by the
// largest popularity in the state; `forecast` is indexed by content id - 1.
std::vector<double> build_state(const cache::CacheState& cache,
                                std::span<const CandidateFeatures> candidates,
                                std::span<const double> forecast, const StateSpec& spec);

}  // namespace dapr::rl
