#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

#include "dapr/cache_state.h"

// Shannon-capacity radio links and the three ways a vehicle can fetch a
// content item: its serving RSU, a neighbouring RSU (two hops), or the base
// station.
namespace dapr::comms {

using RsuId = std::uint32_t;

class UnreachableError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LinkParams {
  double bandwidth_hz = 540e3;
  double tx_power_dbm = 30.0;
  double distance_m = 100.0;
  double path_loss_exponent = 2.0;
  double fading = 1.0;
  double noise_dbm = -114.0;
};

void validate(const LinkParams& lp);

enum class PathKind { kLocal, kNeighborRsu, kBaseStation };

const char* to_string(PathKind kind);

struct FetchPath {
  PathKind kind = PathKind::kBaseStation;
  LinkParams first_hop;
  std::optional<LinkParams> second_hop;  // present iff kind == kNeighborRsu
  std::optional<RsuId> neighbor;
};

double dbm_to_watts(double dbm);

// r = W log2(1 + P d^-beta h^2 / sigma^2), powers in watts.
double link_rate(const LinkParams& lp);

// Local: d/r_ij. Neighbour: d/r_ij + d/r_ik. Base station: d/r_iB.
double delivery_delay(double size_bits, const FetchPath& path);

// Rayleigh-distributed amplitude with unit mean.
double sample_rayleigh_fading(std::mt19937_64& rng);

enum class PathSelection {
  kPriority,  // local, then lowest-id neighbour holding the item, then BS
  kMaxRate,   // whichever option has the highest end-to-end rate
};

struct FetchOptions {
  LinkParams local;
  std::map<RsuId, LinkParams> neighbor_hop;  // second hop per neighbour RSU
  LinkParams base_station;
};

// `neighbors` maps neighbour RSU id to its cache; the base station always has
// every item.
FetchPath resolve_fetch_path(cache::ContentId content, const cache::CacheState& local,
                             const std::map<RsuId, const cache::CacheState*>& neighbors,
                             const FetchOptions& links,
                             PathSelection selection = PathSelection::kPriority);

}  // namespace dapr::comms
