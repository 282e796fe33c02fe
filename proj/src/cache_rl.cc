#include "dapr/cache_rl.h"

#include <algorithm>
#include <limits>
#include <cmath>
#include <stdexcept>
#include <string>

namespace dapr::rl {

void RewardConfig::validate() const {
  const double sum = lambda[0] + lambda[1] + lambda[2];
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("reward: lambdas must sum to 1");
  if (!(lambda[0] > 0.0 && lambda[0] < lambda[1] && lambda[1] < lambda[2])) {
    throw std::invalid_argument("reward: need 0 < lambda1 < lambda2 < lambda3");
  }
  if (!(xi > 0.0 && xi < 1.0 && zeta > 0.0 && zeta < 1.0) || std::abs(xi + zeta - 1.0) > 1e-9) {
    throw std::invalid_argument("reward: xi, zeta must lie in (0,1) and sum to 1");
  }
}

namespace {

std::size_t path_index(comms::PathKind p) {
  switch (p) {
    case comms::PathKind::kLocal: return 0;
    case comms::PathKind::kNeighborRsu: return 1;
    case comms::PathKind::kBaseStation: return 2;
  }
  throw std::logic_error("unknown path kind");
}

}  // namespace

double reward(std::span<const ServedRequest> served, const RewardConfig& cfg) {
  cfg.validate();
  if (served.empty()) return 0.0;
  std::array<double, 3> hits{0, 0, 0};
  for (const auto& s : served) {
    if (!(s.delay_s >= 0.0)) throw std::invalid_argument("reward: negative delay");
    hits[path_index(s.path)] += 1.0;
  }
  const double total = static_cast<double>(served.size());
  double r = 0.0;
  for (const auto& s : served) {
    const std::size_t p = path_index(s.path);
    const double inner = cfg.inner == InnerLambda::kAsWritten ? cfg.lambda[p] : 1.0;
    r += -cfg.lambda[p] * (cfg.xi * s.delay_s - cfg.zeta * (1.0 - inner * hits[p] / total));
  }
  return r;
}

ApplyResult apply_action(const cache::CacheState& cache, const CacheAction& action,
                         std::span<const Candidate> candidates, const PopularityFn& popularity) {
  if (action.size() != candidates.size()) {
    throw std::invalid_argument("apply_action: action has " + std::to_string(action.size()) +
                                " entries for " + std::to_string(candidates.size()) +
                                " candidates");
  }
  ApplyResult res{cache, {}, {}, {}};
  cache::CacheState& c = res.cache;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (action[i] == 0) continue;
    const Candidate& cand = candidates[i];
    if (c.contains(cand.id)) continue;
    if (cand.size_bytes > c.capacity()) {
      res.skipped.push_back(cand.id);
      continue;
    }
    std::vector<cache::CacheItem> evictable;
    std::uint64_t reclaimable = c.free_bytes();
    for (const auto& item : c.items()) {
      if (std::find(res.admitted.begin(), res.admitted.end(), item.id) != res.admitted.end()) {
        continue;
      }
      evictable.push_back(item);
      reclaimable += item.size_bytes;
    }
    if (reclaimable < cand.size_bytes) {
      res.skipped.push_back(cand.id);
      continue;
    }
    std::vector<std::pair<double, ContentId>> order;
    for (const auto& item : evictable) order.emplace_back(popularity(item.id), item.id);
    std::sort(order.begin(), order.end());
    for (std::size_t k = 0; c.free_bytes() < cand.size_bytes; ++k) {
      c.erase(order[k].second);
      res.evicted.push_back(order[k].second);
    }
    c.insert({cand.id, 0, cand.size_bytes});
    res.admitted.push_back(cand.id);
  }
  return res;
}

std::size_t StateSpec::dim() const { return 4 * cached_slots + 1 + 6 * candidates + forecast_top_k; }

namespace {

double clip01(double x) {
  if (!(x > 0.0)) return 0.0;  // also maps NaN to 0
  return x < 1.0 ? x : 1.0;
}

}  // namespace

std::vector<double> build_state(const cache::CacheState& cache,
                                std::span<const CandidateFeatures> candidates,
                                std::span<const double> forecast, const StateSpec& spec) {
  if (candidates.size() != spec.candidates) {
    throw std::invalid_argument("build_state: expected " + std::to_string(spec.candidates) +
                                " candidates, got " + std::to_string(candidates.size()));
  }
  if (forecast.size() != spec.catalog_size) {
    throw std::invalid_argument("build_state: forecast width " + std::to_string(forecast.size()) +
                                " differs from catalog " + std::to_string(spec.catalog_size));
  }
  if (spec.capacity_bytes == 0 || spec.catalog_size == 0) {
    throw std::invalid_argument("build_state: capacity and catalog must be > 0");
  }
  std::vector<double> s;
  s.reserve(spec.dim());
  const double cap = static_cast<double>(spec.capacity_bytes);
  const double catalog = static_cast<double>(spec.catalog_size);

  std::vector<cache::CacheItem> items = cache.items();
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    return a.access_count != b.access_count ? a.access_count > b.access_count : a.id < b.id;
  });
  double max_count = 1.0;
  for (const auto& it : items) max_count = std::max(max_count, static_cast<double>(it.access_count));
  double max_pop = 0.0, max_heat = 0.0;
  for (const auto& c : candidates) {
    max_pop = std::max(max_pop, c.predicted_popularity);
    max_heat = std::max(max_heat, c.heat);
  }
  for (std::size_t k = 0; k < spec.cached_slots && k < items.size(); ++k) {
    const double p = items[k].id <= forecast.size() && items[k].id > 0 ? forecast[items[k].id - 1] : 0.0;
    max_pop = std::max(max_pop, p);
  }
  for (std::size_t k = 0; k < spec.cached_slots; ++k) {
    if (k < items.size()) {
      const ContentId id = items[k].id;
      const double p = id <= forecast.size() && id > 0 ? forecast[id - 1] : 0.0;
      s.push_back(clip01(static_cast<double>(id) / catalog));
      s.push_back(clip01(static_cast<double>(items[k].access_count) / max_count));
      s.push_back(clip01(static_cast<double>(items[k].size_bytes) / cap));
      s.push_back(max_pop > 0.0 ? clip01(p / max_pop) : 0.0);
    } else {
      s.insert(s.end(), {0.0, 0.0, 0.0, 0.0});
    }
  }
  s.push_back(clip01(static_cast<double>(cache.used_bytes()) / cap));

  double weakest = std::numeric_limits<double>::infinity();
  for (const auto& it : items) {
    weakest = std::min(weakest, it.id <= forecast.size() && it.id > 0 ? forecast[it.id - 1] : 0.0);
  }
  for (const auto& c : candidates) {
    s.push_back(clip01(c.request_share));
    s.push_back(cache.contains(c.id) ? 1.0 : 0.0);
    s.push_back(clip01(static_cast<double>(c.size_bytes) / cap));
    s.push_back(max_pop > 0.0 ? clip01(c.predicted_popularity / max_pop) : 0.0);
    s.push_back(max_heat > 0.0 ? clip01(c.heat / max_heat) : 0.0);
    // Edge over the resident that would go first: 1 when no eviction is needed.
    double edge = 0.0;
    if (c.id != 0 && !cache.contains(c.id)) {
      if (c.size_bytes <= cache.free_bytes()) {
        edge = 1.0;
      } else if (c.predicted_popularity + weakest > 0.0) {
        edge = c.predicted_popularity / (c.predicted_popularity + weakest);
      } else {
        edge = 0.5;
      }
    }
    s.push_back(clip01(edge));
  }

  std::vector<double> top(forecast.begin(), forecast.end());
  const std::size_t k = std::min(spec.forecast_top_k, top.size());
  std::partial_sort(top.begin(), top.begin() + static_cast<std::ptrdiff_t>(k), top.end(),
                    std::greater<>());
  for (std::size_t i = 0; i < spec.forecast_top_k; ++i) s.push_back(i < k ? clip01(top[i]) : 0.0);
  return s;
}

}  // namespace dapr::rl
