#include "dapr/comms.h"

#include <cmath>
#include <numbers>
#include <string>

namespace dapr::comms {

void validate(const LinkParams& lp) {
  if (!(lp.bandwidth_hz > 0.0) || !(lp.distance_m > 0.0) || !(lp.path_loss_exponent > 0.0) ||
      !(lp.fading > 0.0)) {
    throw std::invalid_argument("link parameters need W, d, beta, h > 0");
  }
}

const char* to_string(PathKind kind) {
  switch (kind) {
    case PathKind::kLocal: return "local";
    case PathKind::kNeighborRsu: return "neighbor";
    case PathKind::kBaseStation: return "bs";
  }
  return "?";
}

double dbm_to_watts(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }

double link_rate(const LinkParams& lp) {
  validate(lp);
  const double signal = dbm_to_watts(lp.tx_power_dbm) *
                        std::pow(lp.distance_m, -lp.path_loss_exponent) * lp.fading * lp.fading;
  const double snr = signal / dbm_to_watts(lp.noise_dbm);
  return lp.bandwidth_hz * std::log2(1.0 + snr);
}

namespace {

double hop_delay(double size_bits, const LinkParams& lp) {
  const double r = link_rate(lp);
  if (!(r > 0.0)) throw UnreachableError("link rate is zero; content unreachable");
  return size_bits / r;
}

}  // namespace

double delivery_delay(double size_bits, const FetchPath& path) {
  if (size_bits < 0.0) throw std::invalid_argument("delivery_delay: negative size");
  const double first = hop_delay(size_bits, path.first_hop);
  switch (path.kind) {
    case PathKind::kLocal:
    case PathKind::kBaseStation:
      return first;
    case PathKind::kNeighborRsu:
      if (!path.second_hop) throw std::invalid_argument("neighbour path without second hop");
      return first + hop_delay(size_bits, *path.second_hop);
  }
  throw std::logic_error("unknown path kind");
}

double sample_rayleigh_fading(std::mt19937_64& rng) {
  // Rayleigh(s) has mean s*sqrt(pi/2); Weibull(k=2, lambda) is Rayleigh(lambda/sqrt 2).
  const double s = 1.0 / std::sqrt(std::numbers::pi / 2.0);
  std::weibull_distribution<double> dist(2.0, s * std::numbers::sqrt2);
  return dist(rng);
}

FetchPath resolve_fetch_path(cache::ContentId content, const cache::CacheState& local,
                             const std::map<RsuId, const cache::CacheState*>& neighbors,
                             const FetchOptions& links, PathSelection selection) {
  FetchPath local_path{PathKind::kLocal, links.local, std::nullopt, std::nullopt};
  FetchPath bs_path{PathKind::kBaseStation, links.base_station, std::nullopt, std::nullopt};

  std::vector<FetchPath> neighbor_paths;
  for (const auto& [id, cache] : neighbors) {  // std::map iterates in id order
    if (cache == nullptr || !cache->contains(content)) continue;
    auto hop = links.neighbor_hop.find(id);
    if (hop == links.neighbor_hop.end()) {
      throw std::invalid_argument("no link parameters for neighbour RSU " + std::to_string(id));
    }
    neighbor_paths.push_back({PathKind::kNeighborRsu, links.local, hop->second, id});
  }

  if (selection == PathSelection::kPriority) {
    if (local.contains(content)) return local_path;
    if (!neighbor_paths.empty()) return neighbor_paths.front();
    return bs_path;
  }

  // Effective rate of a path is the rate that delivers one bit in the path's delay.
  auto effective_rate = [](const FetchPath& p) {
    const double d = delivery_delay(1.0, p);
    return d > 0.0 ? 1.0 / d : 0.0;
  };
  std::vector<FetchPath> options;
  if (local.contains(content)) options.push_back(local_path);
  options.insert(options.end(), neighbor_paths.begin(), neighbor_paths.end());
  options.push_back(bs_path);
  const FetchPath* best = &options.front();
  double best_rate = effective_rate(*best);
  for (const auto& p : options) {
    const double r = effective_rate(p);
    if (r > best_rate) {
      best = &p;
      best_rate = r;
    }
  }
  return *best;
}

}  // namespace dapr::comms
